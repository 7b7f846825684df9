//! Differentiable 3D Gaussian splatting: primitives, perspective projection,
//! forward rendering with RGB/feature/alpha outputs, and hand-derived
//! analytic gradients for every Gaussian parameter.

mod backward;
mod checkpoint;
mod project;
mod render;

pub use backward::{render_backward, GaussianGrads};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use project::{project, ProjectedSplat};
pub use render::{render, Background, RenderOutput};

use nalgebra::{Matrix3, Vector3};

/// Low-pass constant added to both diagonal entries of the 2D covariance.
pub const COV2D_BLUR: f64 = 0.3;
/// Gaussians closer than this to the camera plane are culled.
pub const NEAR_PLANE: f64 = 0.01;
/// Contributions with alpha-weight below this are skipped.
pub const WEIGHT_CUTOFF: f64 = 1e-6;
/// Front-to-back compositing stops once transmittance falls below this.
pub const TRANSMITTANCE_STOP: f64 = 1e-4;
/// 2D covariances with determinant below this are skipped for the view.
pub const DET_EPS: f64 = 1e-12;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-12, 1.0 - 1e-12);
    (p / (1.0 - p)).ln()
}

/// One splatting primitive. Raw parameters are unconstrained; activations
/// (exp for scale, logistic for opacity and color, quaternion normalization)
/// are applied at use sites so gradients flow through them.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    pub position: Vector3<f64>,
    pub log_scale: Vector3<f64>,
    /// Quaternion (w, x, y, z); renormalized after every optimizer step and
    /// normalized again at use so the rotation is always well-defined.
    pub rotation: [f64; 4],
    pub opacity_logit: f64,
    pub color_logit: Vector3<f64>,
    pub feature: Vec<f64>,
}

impl Gaussian {
    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn color(&self) -> Vector3<f64> {
        self.color_logit.map(sigmoid)
    }

    pub fn scale(&self) -> Vector3<f64> {
        self.log_scale.map(f64::exp)
    }

    pub fn normalized_rotation(&self) -> [f64; 4] {
        let [w, x, y, z] = self.rotation;
        let n = (w * w + x * x + y * y + z * z).sqrt();
        [w / n, x / n, y / n, z / n]
    }

    pub fn renormalize_rotation(&mut self) {
        self.rotation = self.normalized_rotation();
    }

    /// Covariance factor R(q) for the normalized quaternion.
    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        quat_to_matrix(self.normalized_rotation())
    }

    /// Sigma = R diag(s^2) R^T, symmetric PSD by construction.
    pub fn covariance(&self) -> Matrix3<f64> {
        let r = self.rotation_matrix();
        let s = self.scale();
        let d = Matrix3::from_diagonal(&Vector3::new(s.x * s.x, s.y * s.y, s.z * s.z));
        r * d * r.transpose()
    }
}

pub fn quat_to_matrix(q: [f64; 4]) -> Matrix3<f64> {
    let [w, x, y, z] = q;
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}
