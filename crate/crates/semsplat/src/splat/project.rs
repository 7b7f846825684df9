//! EWA perspective projection of a 3D Gaussian to a 2D screen-space splat.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};

use super::{Gaussian, COV2D_BLUR, DET_EPS, NEAR_PLANE, WEIGHT_CUTOFF};
use crate::camera::Camera;

/// Screen-space footprint of one Gaussian, with everything the compositing
/// loops and the backward pass need.
#[derive(Debug, Clone)]
pub struct ProjectedSplat {
    /// Index into the input Gaussian list.
    pub gaussian_index: usize,
    pub mean2d: Vector2<f64>,
    /// Symmetric 2x2 covariance (with the low-pass blur added).
    pub cov2d: Matrix2<f64>,
    /// Camera-space z.
    pub depth: f64,
    /// Activated opacity.
    pub alpha: f64,
    /// Inverse covariance entries (c00, c01, c11 of the inverse).
    pub inv00: f64,
    pub inv01: f64,
    pub inv11: f64,
    /// Conservative pixel bounds: every pixel with weight >= WEIGHT_CUTOFF
    /// lies inside [x0, x1) x [y0, y1).
    pub x0: usize,
    pub x1: usize,
    pub y0: usize,
    pub y1: usize,
}

impl ProjectedSplat {
    /// exp(-1/2 d^T cov2d^-1 d) at pixel center (px+0.5, py+0.5).
    #[inline]
    pub fn gauss_weight(&self, px: usize, py: usize) -> f64 {
        let dx = px as f64 + 0.5 - self.mean2d.x;
        let dy = py as f64 + 0.5 - self.mean2d.y;
        let sigma = 0.5 * (dx * dx * self.inv00 + dy * dy * self.inv11) + dx * dy * self.inv01;
        (-sigma).exp()
    }
}

/// Project one Gaussian. Returns `None` when the Gaussian is culled: behind
/// the near plane, transparent below the weight cutoff, footprint outside
/// the image, or a degenerate 2D covariance.
pub fn project(g: &Gaussian, cam: &Camera, gaussian_index: usize) -> Option<ProjectedSplat> {
    let x_cam = cam.world_to_camera(&g.position);
    if x_cam.z <= NEAR_PLANE {
        return None;
    }
    let alpha = g.opacity();
    if alpha <= WEIGHT_CUTOFF {
        return None;
    }

    let mean2d = cam.project_cam(&x_cam);
    let cov2d = project_covariance(g, cam, &x_cam);
    let det = cov2d[(0, 0)] * cov2d[(1, 1)] - cov2d[(0, 1)] * cov2d[(0, 1)];
    if !(det > DET_EPS) {
        return None;
    }
    let inv00 = cov2d[(1, 1)] / det;
    let inv01 = -cov2d[(0, 1)] / det;
    let inv11 = cov2d[(0, 0)] / det;

    // Pixels outside the Mahalanobis radius r with alpha*exp(-r^2/2) = cutoff
    // can never pass the weight cutoff, so an axis-aligned bound around that
    // ellipse is behaviorally equivalent to testing every pixel.
    let r2 = 2.0 * (alpha / WEIGHT_CUTOFF).ln();
    let half_x = (r2 * cov2d[(0, 0)]).sqrt() + 1.0;
    let half_y = (r2 * cov2d[(1, 1)]).sqrt() + 1.0;
    let x0 = (mean2d.x - half_x).floor().max(0.0) as usize;
    let y0 = (mean2d.y - half_y).floor().max(0.0) as usize;
    let x1 = ((mean2d.x + half_x).ceil().max(0.0) as usize).min(cam.width);
    let y1 = ((mean2d.y + half_y).ceil().max(0.0) as usize).min(cam.height);
    if x0 >= x1 || y0 >= y1 {
        return None;
    }

    Some(ProjectedSplat {
        gaussian_index,
        mean2d,
        cov2d,
        depth: x_cam.z,
        alpha,
        inv00,
        inv01,
        inv11,
        x0,
        x1,
        y0,
        y1,
    })
}

/// J W Sigma W^T J^T + blur*I with J the perspective Jacobian at the mean.
pub fn project_covariance(g: &Gaussian, cam: &Camera, x_cam: &Vector3<f64>) -> Matrix2<f64> {
    let sigma = g.covariance();
    let m3: Matrix3<f64> = cam.rotation * sigma * cam.rotation.transpose();
    let j = perspective_jacobian(cam, x_cam);
    let j0 = Vector3::new(j[0], j[1], j[2]);
    let j1 = Vector3::new(j[3], j[4], j[5]);
    let c00 = (j0.transpose() * m3 * j0)[0] + COV2D_BLUR;
    let c01 = (j0.transpose() * m3 * j1)[0];
    let c11 = (j1.transpose() * m3 * j1)[0] + COV2D_BLUR;
    Matrix2::new(c00, c01, c01, c11)
}

/// Rows of the 2x3 Jacobian of (u, v) w.r.t. the camera-space point,
/// returned as [j0x, j0y, j0z, j1x, j1y, j1z].
pub fn perspective_jacobian(cam: &Camera, x_cam: &Vector3<f64>) -> [f64; 6] {
    let z_inv = 1.0 / x_cam.z;
    let z_inv2 = z_inv * z_inv;
    [
        cam.fx * z_inv,
        0.0,
        -cam.fx * x_cam.x * z_inv2,
        0.0,
        cam.fy * z_inv,
        -cam.fy * x_cam.y * z_inv2,
    ]
}
