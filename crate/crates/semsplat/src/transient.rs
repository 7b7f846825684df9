//! Two-stage transient prediction.
//!
//! Stage one jointly optimizes a throwaway RGB splat model and a per-frame
//! latent probability field under a masked photometric loss with an L1
//! sparsity regularizer; the field is then frozen. Stage two scores each
//! tracked instance by its mask-weighted mean probability, thresholds the
//! scores into a transient-instance set, and replaces the soft maps with
//! exact unions of that set's segment masks.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::{FeatureMap, RgbImage, ScalarMap};
use crate::mask::Mask;
use crate::oracle::InstanceSegment;
use crate::scene::GroundTruthFrame;
use crate::splat::{render, render_backward, sigmoid, Background, Gaussian};
use crate::train::GaussianAdam;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distance {
    L1,
    L2,
}

impl Distance {
    #[inline]
    fn value(&self, r: f64) -> f64 {
        match self {
            Distance::L1 => r.abs(),
            Distance::L2 => r * r,
        }
    }

    #[inline]
    fn derivative(&self, r: f64) -> f64 {
        match self {
            Distance::L1 => {
                if r > 0.0 {
                    1.0
                } else if r < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            Distance::L2 => 2.0 * r,
        }
    }
}

/// Value and gradients of a transient-weighted channel-summed distance loss,
/// mean-normalized by pixel count.
pub struct WeightedLoss {
    pub loss: f64,
    /// dL/d(rendered), same layout as the rendered buffer.
    pub d_rendered: Vec<f64>,
    /// Per-pixel channel-summed distance d(residual), before weighting.
    pub pixel_distance: Vec<f64>,
}

fn weighted_loss(
    target: &[f64],
    rendered: &[f64],
    weights: &ScalarMap,
    channels: usize,
    distance: Distance,
) -> Result<WeightedLoss> {
    let pixels = weights.data.len();
    if target.len() != rendered.len() || target.len() != pixels * channels {
        return Err(Error::ShapeMismatch(format!(
            "loss shapes: target {}, rendered {}, {} pixels x {} channels",
            target.len(),
            rendered.len(),
            pixels,
            channels
        )));
    }
    let inv_p = 1.0 / pixels as f64;
    let mut loss = 0.0;
    let mut d_rendered = vec![0.0; rendered.len()];
    let mut pixel_distance = vec![0.0; pixels];
    for p in 0..pixels {
        let w = 1.0 - weights.data[p];
        let mut d_sum = 0.0;
        for c in 0..channels {
            let idx = p * channels + c;
            let r = rendered[idx] - target[idx];
            d_sum += distance.value(r);
            d_rendered[idx] = w * distance.derivative(r) * inv_p;
        }
        pixel_distance[p] = d_sum;
        loss += w * d_sum;
    }
    Ok(WeightedLoss {
        loss: loss * inv_p,
        d_rendered,
        pixel_distance,
    })
}

/// Sum over pixels of (1 - M(p)) * d(I(p) - I_hat(p)), channel-summed and
/// mean-normalized by pixel count. With M = 0 this is the plain
/// photometric loss.
pub fn weighted_rgb_loss(
    target: &RgbImage,
    rendered: &RgbImage,
    m: &ScalarMap,
    distance: Distance,
) -> Result<f64> {
    Ok(weighted_rgb_loss_grad(target, rendered, m, distance)?.loss)
}

pub fn weighted_rgb_loss_grad(
    target: &RgbImage,
    rendered: &RgbImage,
    m: &ScalarMap,
    distance: Distance,
) -> Result<WeightedLoss> {
    weighted_loss(&target.data, &rendered.data, m, 3, distance)
}

/// The feature-map analog of the weighted photometric loss.
pub fn weighted_feature_loss(
    target: &FeatureMap,
    rendered: &FeatureMap,
    m: &ScalarMap,
    distance: Distance,
) -> Result<f64> {
    Ok(weighted_feature_loss_grad(target, rendered, m, distance)?.loss)
}

pub fn weighted_feature_loss_grad(
    target: &FeatureMap,
    rendered: &FeatureMap,
    m: &ScalarMap,
    distance: Distance,
) -> Result<WeightedLoss> {
    if target.dim != rendered.dim {
        return Err(Error::ShapeMismatch(format!(
            "feature dims {} vs {}",
            target.dim, rendered.dim
        )));
    }
    weighted_loss(&target.data, &rendered.data, m, target.dim, distance)
}

/// Per-frame latent grids at reduced resolution. The full-resolution
/// probability map is the logistic of the bilinearly upsampled latent, so
/// every map value stays strictly inside (0, 1).
#[derive(Debug, Clone)]
pub struct TransientField {
    pub width: usize,
    pub height: usize,
    pub grid_w: usize,
    pub grid_h: usize,
    pub factor: usize,
    /// Latents keyed by absolute frame index.
    pub latents: BTreeMap<usize, Vec<f64>>,
}

impl TransientField {
    pub fn new(width: usize, height: usize, factor: usize, frame_indices: &[usize]) -> Self {
        let factor = factor.max(1);
        let grid_w = width.div_ceil(factor);
        let grid_h = height.div_ceil(factor);
        let latents = frame_indices
            .iter()
            // Start slightly negative: maps begin near zero probability.
            .map(|&j| (j, vec![-2.0; grid_w * grid_h]))
            .collect();
        TransientField {
            width,
            height,
            grid_w,
            grid_h,
            factor,
            latents,
        }
    }

    #[inline]
    fn cell_coords(&self, p: usize, extent: usize, grid_extent: usize) -> (usize, usize, f64) {
        let u = ((p as f64 + 0.5) / self.factor as f64 - 0.5)
            .clamp(0.0, (grid_extent.max(1) - 1) as f64);
        let c0 = u.floor() as usize;
        let c1 = (c0 + 1).min(grid_extent - 1);
        let _ = extent;
        (c0, c1, u - c0 as f64)
    }

    /// The probability map for an absolute frame index.
    pub fn map(&self, frame: usize) -> ScalarMap {
        let latent = self.latents.get(&frame).expect("frame has a latent grid");
        let mut out = ScalarMap::new(self.width, self.height);
        for py in 0..self.height {
            let (y0, y1, fy) = self.cell_coords(py, self.height, self.grid_h);
            for px in 0..self.width {
                let (x0, x1, fx) = self.cell_coords(px, self.width, self.grid_w);
                let v00 = latent[y0 * self.grid_w + x0];
                let v01 = latent[y0 * self.grid_w + x1];
                let v10 = latent[y1 * self.grid_w + x0];
                let v11 = latent[y1 * self.grid_w + x1];
                let v = (1.0 - fy) * ((1.0 - fx) * v00 + fx * v01)
                    + fy * ((1.0 - fx) * v10 + fx * v11);
                out.set(px, py, sigmoid(v));
            }
        }
        out
    }

    /// Scatter dL/dM back into the frame's latent grid.
    pub fn backward(&self, frame: usize, map: &ScalarMap, d_map: &[f64]) -> Vec<f64> {
        let mut grad = vec![0.0; self.grid_w * self.grid_h];
        for py in 0..self.height {
            let (y0, y1, fy) = self.cell_coords(py, self.height, self.grid_h);
            for px in 0..self.width {
                let (x0, x1, fx) = self.cell_coords(px, self.width, self.grid_w);
                let m = map.get(px, py);
                let d_latent = d_map[py * self.width + px] * m * (1.0 - m);
                grad[y0 * self.grid_w + x0] += d_latent * (1.0 - fy) * (1.0 - fx);
                grad[y0 * self.grid_w + x1] += d_latent * (1.0 - fy) * fx;
                grad[y1 * self.grid_w + x0] += d_latent * fy * (1.0 - fx);
                grad[y1 * self.grid_w + x1] += d_latent * fy * fx;
            }
        }
        grad
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TransientInitConfig {
    pub lambda2: f64,
    pub grid_factor: usize,
    pub iters: usize,
    pub gaussian_lr: f64,
    pub latent_lr: f64,
    pub seed: u64,
}

impl Default for TransientInitConfig {
    fn default() -> Self {
        TransientInitConfig {
            lambda2: 0.2,
            grid_factor: 4,
            iters: 1500,
            gaussian_lr: 0.01,
            latent_lr: 0.05,
            seed: 0,
        }
    }
}

/// Stage one: optimize throwaway Gaussians (RGB only, squared distance)
/// jointly with the latent field under
/// loss = weighted_rgb + lambda2 * mean |M|, then freeze the field.
/// Returns the field and the temporary Gaussian set.
pub fn train_init(
    frames: &[&GroundTruthFrame],
    init_gaussians: Vec<Gaussian>,
    background_rgb: nalgebra::Vector3<f64>,
    cfg: &TransientInitConfig,
) -> Result<(TransientField, Vec<Gaussian>)> {
    assert!(!frames.is_empty(), "train_init needs frames");
    let width = frames[0].rgb.width;
    let height = frames[0].rgb.height;
    let pixels = (width * height) as f64;
    let indices: Vec<usize> = frames.iter().map(|f| f.index).collect();
    let mut field = TransientField::new(width, height, cfg.grid_factor, &indices);

    // Strip features: the temporary model is RGB-only.
    let mut gaussians: Vec<Gaussian> = init_gaussians
        .into_iter()
        .map(|mut g| {
            g.feature = Vec::new();
            g
        })
        .collect();
    let background = Background {
        rgb: background_rgb,
        feature: Vec::new(),
    };
    let mut optim = GaussianAdam::new(gaussians.len(), 0, cfg.gaussian_lr);
    let mut latent_optims: BTreeMap<usize, crate::train::Adam> = indices
        .iter()
        .map(|&j| {
            (
                j,
                crate::train::Adam::new(cfg.latent_lr, field.grid_w * field.grid_h),
            )
        })
        .collect();

    let d_feat = vec![0.0; width * height * 0];
    for iter in 0..cfg.iters {
        let frame = frames[iter % frames.len()];
        let m = field.map(frame.index);
        let out = render(&gaussians, &frame.camera, &background);
        let rgb_loss = weighted_rgb_loss_grad(&frame.rgb, &out.rgb, &m, Distance::L2)?;
        let reg: f64 = m.data.iter().sum::<f64>() / pixels;
        let loss = rgb_loss.loss + cfg.lambda2 * reg;
        if !loss.is_finite() {
            return Err(Error::Diverged(iter));
        }

        // Gaussian side.
        let grads = render_backward(
            &gaussians,
            &frame.camera,
            &background,
            &out,
            &rgb_loss.d_rendered,
            &d_feat,
        );
        optim.step(&mut gaussians, &grads);

        // Latent side: d loss / dM = -d(residual)/P from the weighting,
        // plus lambda2/P from the regularizer (M is strictly positive).
        let d_map: Vec<f64> = rgb_loss
            .pixel_distance
            .iter()
            .map(|&d| (cfg.lambda2 - d) / pixels)
            .collect();
        let latent_grad = field.backward(frame.index, &m, &d_map);
        let latent = field.latents.get_mut(&frame.index).expect("latent");
        latent_optims
            .get_mut(&frame.index)
            .expect("optim")
            .step(latent, &latent_grad);
    }
    Ok((field, gaussians))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransientScore {
    pub instance_id: u32,
    /// Mask-weighted mean probability over all frames with maps.
    pub ratio: f64,
    pub included: bool,
}

/// Stage two scoring: instance i joins the transient set when the summed
/// mask-weighted probability over its segments reaches the threshold:
/// sum_j sum_p S_i^j(p) M^j(p) / sum_j sum_p S_i^j(p) >= threshold.
/// Instances with zero total mask area are excluded with a warning.
pub fn transient_set(
    segments: &[InstanceSegment],
    maps: &BTreeMap<usize, ScalarMap>,
    threshold: f64,
) -> Vec<TransientScore> {
    assert!(
        threshold > 0.0 && threshold < 1.0,
        "threshold must be in (0,1)"
    );
    let mut weighted: BTreeMap<u32, (f64, f64)> = BTreeMap::new();
    for seg in segments {
        let Some(map) = maps.get(&seg.frame) else {
            continue;
        };
        let entry = weighted.entry(seg.instance_id).or_insert((0.0, 0.0));
        for (p, &m) in seg.mask.data.iter().enumerate() {
            if m != 0 {
                entry.0 += map.data[p];
                entry.1 += 1.0;
            }
        }
    }
    weighted
        .into_iter()
        .map(|(instance_id, (num, den))| {
            if den == 0.0 {
                eprintln!("warning: instance {instance_id} has zero mask area, excluded");
                TransientScore {
                    instance_id,
                    ratio: 0.0,
                    included: false,
                }
            } else {
                let ratio = num / den;
                TransientScore {
                    instance_id,
                    ratio,
                    included: ratio >= threshold,
                }
            }
        })
        .collect()
}

/// The per-frame refined mask: the exact union of the transient set's
/// segment masks. Frames where no transient instance appears get all-zero.
pub fn refine_masks(
    transient_ids: &[u32],
    segments: &[InstanceSegment],
    n_frames: usize,
    width: usize,
    height: usize,
) -> Vec<Mask> {
    let mut masks: Vec<Mask> = (0..n_frames).map(|_| Mask::new(width, height)).collect();
    for seg in segments {
        if transient_ids.contains(&seg.instance_id) && seg.frame < n_frames {
            masks[seg.frame].union_with(&seg.mask);
        }
    }
    masks
}
