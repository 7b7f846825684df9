//! Seeded scene generators shared by tests, the acceptance suite, and the
//! runnable examples. Parameters are drawn well away from the renderer's
//! cutoffs so finite-difference checks stay smooth.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camera::Camera;
use crate::splat::{Background, Gaussian};

/// An axis-aligned camera at the origin looking along +z.
pub fn fixture_camera(width: usize, height: usize) -> Camera {
    Camera {
        fx: 0.9 * width.min(height) as f64,
        fy: 0.9 * width.min(height) as f64,
        cx: width as f64 / 2.0,
        cy: height as f64 / 2.0,
        width,
        height,
        rotation: Matrix3::identity(),
        translation: Vector3::zeros(),
    }
}

/// A reproducible random scene of `n` Gaussians visible from the fixture
/// camera, plus a random background.
pub fn random_scene(
    seed: u64,
    n: usize,
    width: usize,
    height: usize,
    dim: usize,
) -> (Vec<Gaussian>, Camera, Background) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e3779b97f4a7c15));
    let cam = fixture_camera(width, height);
    let gaussians = (0..n)
        .map(|_| {
            let z = rng.gen_range(3.0..6.0);
            let spread = 0.7 * z * (width as f64 / 2.0) / cam.fx;
            Gaussian {
                position: Vector3::new(
                    rng.gen_range(-spread..spread),
                    rng.gen_range(-spread..spread),
                    z,
                ),
                log_scale: Vector3::new(
                    rng.gen_range(-1.8..-0.8),
                    rng.gen_range(-1.8..-0.8),
                    rng.gen_range(-1.8..-0.8),
                ),
                rotation: [
                    rng.gen_range(0.5..1.0),
                    rng.gen_range(-0.5..0.5),
                    rng.gen_range(-0.5..0.5),
                    rng.gen_range(-0.5..0.5),
                ],
                opacity_logit: rng.gen_range(-1.0..2.0),
                color_logit: Vector3::new(
                    rng.gen_range(-2.0..2.0),
                    rng.gen_range(-2.0..2.0),
                    rng.gen_range(-2.0..2.0),
                ),
                feature: (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            }
        })
        .collect();
    let background = Background {
        rgb: Vector3::new(
            rng.gen_range(0.0..1.0),
            rng.gen_range(0.0..1.0),
            rng.gen_range(0.0..1.0),
        ),
        feature: (0..dim).map(|_| rng.gen_range(-0.5..0.5)).collect(),
    };
    (gaussians, cam, background)
}

/// Deterministic sub-seed for a keyed draw, keeping parallel work order-free.
pub fn derive_seed(base: u64, a: u64, b: u64) -> u64 {
    let mut x = base
        .wrapping_mul(0x9e3779b97f4a7c15)
        .wrapping_add(a.wrapping_mul(0xbf58476d1ce4e5b9))
        .wrapping_add(b.wrapping_mul(0x94d049bb133111eb));
    x ^= x >> 30;
    x = x.wrapping_mul(0xbf58476d1ce4e5b9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}
