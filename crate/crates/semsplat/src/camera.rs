//! Pinhole camera. Camera coordinates are x-right, y-down, z-forward;
//! a world point maps to camera space as `x_cam = R * x_world + t`.

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// World-to-camera rotation, orthonormal.
    pub rotation: Matrix3<f64>,
    /// World-to-camera translation.
    pub translation: Vector3<f64>,
}

impl Camera {
    /// Camera at `eye` looking at `target`, principal point at the image center.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        fov_y_degrees: f64,
        width: usize,
        height: usize,
    ) -> Self {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[
            right.transpose(),
            down.transpose(),
            forward.transpose(),
        ]);
        let translation = -rotation * eye;
        let fy = (height as f64 / 2.0) / (fov_y_degrees.to_radians() / 2.0).tan();
        Camera {
            fx: fy,
            fy,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
            rotation,
            translation,
        }
    }

    pub fn eye(&self) -> Vector3<f64> {
        -self.rotation.transpose() * self.translation
    }

    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Project a camera-space point; caller guarantees z > 0.
    pub fn project_cam(&self, p: &Vector3<f64>) -> Vector2<f64> {
        Vector2::new(
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        )
    }

    /// World-space origin and unit direction of the ray through pixel center (px, py).
    pub fn pixel_ray(&self, px: usize, py: usize) -> (Vector3<f64>, Vector3<f64>) {
        let dir_cam = Vector3::new(
            (px as f64 + 0.5 - self.cx) / self.fx,
            (py as f64 + 0.5 - self.cy) / self.fy,
            1.0,
        )
        .normalize();
        (self.eye(), self.rotation.transpose() * dir_cam)
    }

    /// Maximum deviation from orthonormality, for the validity invariant.
    pub fn orthonormality_error(&self) -> f64 {
        let gram = self.rotation * self.rotation.transpose();
        let mut err: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let expected = if i == j { 1.0 } else { 0.0 };
                err = err.max((gram[(i, j)] - expected).abs());
            }
        }
        err
    }
}
