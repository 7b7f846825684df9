//! semsplat: language-embedded 3D Gaussian splatting for egocentric scenes.
//!
//! The crate reconstructs synthetic egocentric sequences with per-Gaussian
//! semantic features, aggregates per-view instance features robustly via
//! MAD outlier rejection, predicts transient distractors in two stages
//! (latent probability maps, then instance-level refinement), and answers
//! open-vocabulary localization/segmentation queries through relevancy
//! scoring on rendered feature maps.
//!
//! Start with the runnable examples (`cargo run --example full_pipeline`)
//! or the `semsplat` binary, which exposes each pipeline stage as a
//! subcommand.

pub mod aggregate;
pub mod camera;
pub mod config;
pub mod error;
pub mod fixtures;
pub mod image;
pub mod mask;
pub mod oracle;
pub mod pipeline;
pub mod query;
pub mod scene;
pub mod splat;
pub mod storage;
pub mod train;
pub mod transient;

pub use error::{Error, Result};

/// Normalize a vector to unit length in place; leaves near-zero vectors as-is.
pub fn normalize_in_place(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 1e-12 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
}

/// Returns the unit-length copy of `v`.
pub fn normalized(v: &[f64]) -> Vec<f64> {
    let mut out = v.to_vec();
    normalize_in_place(&mut out);
    out
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Cosine similarity; 0 when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = norm(a);
    let nb = norm(b);
    if na < 1e-12 || nb < 1e-12 {
        return 0.0;
    }
    dot(a, b) / (na * nb)
}
