//! Forward rendering: depth-sorted front-to-back alpha compositing of
//! projected splats into RGB, feature, and accumulated-alpha buffers.

use nalgebra::Vector3;
use rayon::prelude::*;

use super::project::{project, ProjectedSplat};
use super::{Gaussian, TRANSMITTANCE_STOP, WEIGHT_CUTOFF};
use crate::camera::Camera;
use crate::image::{FeatureMap, RgbImage, ScalarMap};

#[derive(Debug, Clone)]
pub struct Background {
    pub rgb: Vector3<f64>,
    pub feature: Vec<f64>,
}

impl Background {
    pub fn black(dim: usize) -> Self {
        Background {
            rgb: Vector3::zeros(),
            feature: vec![0.0; dim],
        }
    }
}

/// Forward outputs plus the projection records the backward pass re-walks.
#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub rgb: RgbImage,
    pub features: FeatureMap,
    pub alpha: ScalarMap,
    /// Visible splats sorted by increasing depth (ties by Gaussian index).
    pub splats: Vec<ProjectedSplat>,
    /// For each image row, indices into `splats` whose footprint covers it,
    /// preserving depth order.
    pub row_bins: Vec<Vec<u32>>,
}

/// Project, depth-sort, and composite. Pixel rows are independent, so the
/// row loop parallelizes without any cross-pixel writes.
pub fn render(gaussians: &[Gaussian], cam: &Camera, background: &Background) -> RenderOutput {
    let dim = background.feature.len();
    for g in gaussians {
        assert_eq!(g.feature.len(), dim, "feature dim mismatch");
    }

    let mut splats: Vec<ProjectedSplat> = gaussians
        .iter()
        .enumerate()
        .filter_map(|(i, g)| project(g, cam, i))
        .collect();
    splats.sort_by(|a, b| {
        a.depth
            .total_cmp(&b.depth)
            .then(a.gaussian_index.cmp(&b.gaussian_index))
    });

    let mut row_bins: Vec<Vec<u32>> = vec![Vec::new(); cam.height];
    for (si, s) in splats.iter().enumerate() {
        for bin in row_bins.iter_mut().take(s.y1).skip(s.y0) {
            bin.push(si as u32);
        }
    }

    let colors: Vec<Vector3<f64>> = gaussians.iter().map(|g| g.color()).collect();

    let width = cam.width;
    let height = cam.height;
    let mut rgb = vec![0.0f64; width * height * 3];
    let mut features = vec![0.0f64; width * height * dim];
    let mut alpha = vec![0.0f64; width * height];

    rgb.par_chunks_mut(width * 3)
        .zip(features.par_chunks_mut(width * dim))
        .zip(alpha.par_chunks_mut(width))
        .enumerate()
        .for_each(|(py, ((rgb_row, feat_row), alpha_row))| {
            for px in 0..width {
                let mut t = 1.0f64;
                let mut out_rgb = [0.0f64; 3];
                let feat_out = &mut feat_row[px * dim..(px + 1) * dim];
                for &si in &row_bins[py] {
                    let s = &splats[si as usize];
                    if px < s.x0 || px >= s.x1 {
                        continue;
                    }
                    let g = s.gauss_weight(px, py);
                    let a = s.alpha * g;
                    if a < WEIGHT_CUTOFF {
                        continue;
                    }
                    let w = a * t;
                    let c = &colors[s.gaussian_index];
                    out_rgb[0] += w * c.x;
                    out_rgb[1] += w * c.y;
                    out_rgb[2] += w * c.z;
                    let f = &gaussians[s.gaussian_index].feature;
                    for (fo, &fv) in feat_out.iter_mut().zip(f) {
                        *fo += w * fv;
                    }
                    t *= 1.0 - a;
                    if t < TRANSMITTANCE_STOP {
                        break;
                    }
                }
                rgb_row[px * 3] = out_rgb[0] + t * background.rgb.x;
                rgb_row[px * 3 + 1] = out_rgb[1] + t * background.rgb.y;
                rgb_row[px * 3 + 2] = out_rgb[2] + t * background.rgb.z;
                for (fo, &bf) in feat_out.iter_mut().zip(&background.feature) {
                    *fo += t * bf;
                }
                alpha_row[px] = 1.0 - t;
            }
        });

    RenderOutput {
        rgb: RgbImage {
            width,
            height,
            data: rgb,
        },
        features: FeatureMap {
            width,
            height,
            dim,
            data: features,
        },
        alpha: ScalarMap {
            width,
            height,
            data: alpha,
        },
        splats,
        row_bins,
    }
}
