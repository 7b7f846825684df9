//! Analytic gradients of the exact forward compositing formula with respect
//! to every Gaussian parameter. The depth sort is treated as a fixed
//! permutation; cutoffs mirror the forward pass bit for bit.
//!
//! The pass runs in two phases. Phase 1 walks pixels and accumulates
//! screen-space gradients per splat (2D mean, 2D covariance entries,
//! activated opacity, linear color, feature). Phase 2 chains those through
//! the projection onto position, log-scale, quaternion, and the logits.
//! Pixel rows are processed in fixed-size chunks whose partial sums are
//! reduced in chunk order, so results do not depend on thread count.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use super::render::{Background, RenderOutput};
use super::{quat_to_matrix, Gaussian, TRANSMITTANCE_STOP, WEIGHT_CUTOFF};
use crate::camera::Camera;

const ROW_CHUNK: usize = 8;

/// Per-Gaussian parameter gradients, indexed like the input list.
#[derive(Debug, Clone)]
pub struct GaussianGrads {
    pub position: Vec<Vector3<f64>>,
    pub log_scale: Vec<Vector3<f64>>,
    pub rotation: Vec<[f64; 4]>,
    pub opacity_logit: Vec<f64>,
    pub color_logit: Vec<Vector3<f64>>,
    /// Flat n * dim feature gradients.
    pub feature: Vec<f64>,
    pub dim: usize,
}

impl GaussianGrads {
    pub fn zeros(n: usize, dim: usize) -> Self {
        GaussianGrads {
            position: vec![Vector3::zeros(); n],
            log_scale: vec![Vector3::zeros(); n],
            rotation: vec![[0.0; 4]; n],
            opacity_logit: vec![0.0; n],
            color_logit: vec![Vector3::zeros(); n],
            feature: vec![0.0; n * dim],
            dim,
        }
    }

    pub fn feature_of(&self, i: usize) -> &[f64] {
        &self.feature[i * self.dim..(i + 1) * self.dim]
    }
}

/// Screen-space gradient slots per splat: d_mean2d (2), d_cov2d entries
/// c00/c01/c11 (3), d_alpha (1), d_color linear (3), then d_feature (dim).
const FIXED_SLOTS: usize = 9;

/// Gradients of a scalar loss with upstream maps dL/d(rgb) and dL/d(features).
/// `output` must come from `render` on the same inputs.
pub fn render_backward(
    gaussians: &[Gaussian],
    cam: &Camera,
    background: &Background,
    output: &RenderOutput,
    d_rgb: &[f64],
    d_features: &[f64],
) -> GaussianGrads {
    let dim = background.feature.len();
    assert_eq!(d_rgb.len(), cam.width * cam.height * 3, "d_rgb shape");
    assert_eq!(
        d_features.len(),
        cam.width * cam.height * dim,
        "d_features shape"
    );

    let n_splats = output.splats.len();
    let stride = FIXED_SLOTS + dim;
    let colors: Vec<Vector3<f64>> = gaussians.iter().map(|g| g.color()).collect();

    // Phase 1: per-chunk screen-space gradient buffers, reduced in chunk order.
    let rows: Vec<usize> = (0..cam.height).collect();
    let chunk_buffers: Vec<Vec<f64>> = rows
        .par_chunks(ROW_CHUNK)
        .map(|chunk| {
            let mut buf = vec![0.0f64; n_splats * stride];
            for &py in chunk {
                accumulate_row(
                    gaussians,
                    cam,
                    background,
                    output,
                    &colors,
                    d_rgb,
                    d_features,
                    py,
                    dim,
                    stride,
                    &mut buf,
                );
            }
            buf
        })
        .collect();

    let mut screen = vec![0.0f64; n_splats * stride];
    for buf in &chunk_buffers {
        for (acc, &v) in screen.iter_mut().zip(buf) {
            *acc += v;
        }
    }

    // Phase 2: chain screen-space gradients to the 3D parameters.
    let mut grads = GaussianGrads::zeros(gaussians.len(), dim);
    let per_splat: Vec<(usize, SplatGrad)> = output
        .splats
        .par_iter()
        .enumerate()
        .map(|(si, s)| {
            let slot = &screen[si * stride..(si + 1) * stride];
            (
                s.gaussian_index,
                chain_to_params(&gaussians[s.gaussian_index], cam, slot, dim),
            )
        })
        .collect();
    for (gi, sg) in per_splat {
        grads.position[gi] += sg.position;
        grads.log_scale[gi] += sg.log_scale;
        for k in 0..4 {
            grads.rotation[gi][k] += sg.rotation[k];
        }
        grads.opacity_logit[gi] += sg.opacity_logit;
        grads.color_logit[gi] += sg.color_logit;
        for (dst, v) in grads.feature[gi * dim..(gi + 1) * dim]
            .iter_mut()
            .zip(&sg.feature)
        {
            *dst += v;
        }
    }
    grads
}

#[allow(clippy::too_many_arguments)]
fn accumulate_row(
    gaussians: &[Gaussian],
    cam: &Camera,
    background: &Background,
    output: &RenderOutput,
    colors: &[Vector3<f64>],
    d_rgb: &[f64],
    d_features: &[f64],
    py: usize,
    dim: usize,
    stride: usize,
    buf: &mut [f64],
) {
    // Per-pixel contribution stack, reused across pixels.
    let mut contribs: Vec<(usize, f64, f64, f64)> = Vec::with_capacity(32);
    for px in 0..cam.width {
        let pix = py * cam.width + px;
        let dc = &d_rgb[pix * 3..pix * 3 + 3];
        let df = &d_features[pix * dim..(pix + 1) * dim];
        if dc.iter().all(|&v| v == 0.0) && df.iter().all(|&v| v == 0.0) {
            continue;
        }

        // Re-walk the forward compositing to collect (splat, a, g, w).
        contribs.clear();
        let mut t = 1.0f64;
        for &si in &output.row_bins[py] {
            let s = &output.splats[si as usize];
            if px < s.x0 || px >= s.x1 {
                continue;
            }
            let g = s.gauss_weight(px, py);
            let a = s.alpha * g;
            if a < WEIGHT_CUTOFF {
                continue;
            }
            contribs.push((si as usize, a, g, a * t));
            t *= 1.0 - a;
            if t < TRANSMITTANCE_STOP {
                break;
            }
        }
        let t_end = t;

        // Suffix-composited color/feature, walked back to front.
        let mut s_rgb = [
            t_end * background.rgb.x,
            t_end * background.rgb.y,
            t_end * background.rgb.z,
        ];
        let mut s_feat: Vec<f64> = background.feature.iter().map(|&v| t_end * v).collect();
        for &(si, a, g, w) in contribs.iter().rev() {
            let splat = &output.splats[si];
            let gi = splat.gaussian_index;
            let c = &colors[gi];
            let f = &gaussians[gi].feature;
            let slot = &mut buf[si * stride..(si + 1) * stride];

            // dL/dw and the two pieces of dL/da.
            let mut dl_dw = dc[0] * c.x + dc[1] * c.y + dc[2] * c.z;
            for (k, &fv) in f.iter().enumerate() {
                dl_dw += df[k] * fv;
            }
            let t_i = w / a;
            let mut dl_suffix = dc[0] * s_rgb[0] + dc[1] * s_rgb[1] + dc[2] * s_rgb[2];
            for (k, &sv) in s_feat.iter().enumerate() {
                dl_suffix += df[k] * sv;
            }
            let dl_da = t_i * dl_dw - dl_suffix / (1.0 - a);

            // Color and feature receive w directly.
            slot[6] += w * dc[0];
            slot[7] += w * dc[1];
            slot[8] += w * dc[2];
            for (k, &dfv) in df.iter().enumerate() {
                slot[FIXED_SLOTS + k] += w * dfv;
            }

            // a = alpha * g.
            slot[5] += dl_da * g;
            let dl_dg = dl_da * splat.alpha;
            let dl_dsigma = -g * dl_dg;

            let dx = px as f64 + 0.5 - splat.mean2d.x;
            let dy = py as f64 + 0.5 - splat.mean2d.y;
            // sigma = 1/2 (dx^2 inv00 + dy^2 inv11) + dx dy inv01.
            let dsig_ddx = dx * splat.inv00 + dy * splat.inv01;
            let dsig_ddy = dy * splat.inv11 + dx * splat.inv01;
            slot[0] += -dl_dsigma * dsig_ddx;
            slot[1] += -dl_dsigma * dsig_ddy;

            // sigma as an explicit function of the covariance entries:
            // sigma = (dx^2 c11 - 2 dx dy c01 + dy^2 c00) / (2 det).
            let c00 = splat.cov2d[(0, 0)];
            let c01 = splat.cov2d[(0, 1)];
            let c11 = splat.cov2d[(1, 1)];
            let det = c00 * c11 - c01 * c01;
            let det2 = det * det;
            let num = dx * dx * c11 - 2.0 * dx * dy * c01 + dy * dy * c00;
            slot[2] += dl_dsigma * (dy * dy * det - num * c11) / (2.0 * det2);
            slot[3] += dl_dsigma * (-dx * dy * det + num * c01) / det2;
            slot[4] += dl_dsigma * (dx * dx * det - num * c00) / (2.0 * det2);

            s_rgb[0] += w * c.x;
            s_rgb[1] += w * c.y;
            s_rgb[2] += w * c.z;
            for (sv, &fv) in s_feat.iter_mut().zip(f) {
                *sv += w * fv;
            }
        }
    }
}

struct SplatGrad {
    position: Vector3<f64>,
    log_scale: Vector3<f64>,
    rotation: [f64; 4],
    opacity_logit: f64,
    color_logit: Vector3<f64>,
    feature: Vec<f64>,
}

/// Chain (d_mean2d, d_cov2d, d_alpha, d_color, d_feature) through the
/// projection and activations onto the raw parameters of one Gaussian.
fn chain_to_params(g: &Gaussian, cam: &Camera, slot: &[f64], dim: usize) -> SplatGrad {
    let d_mean = Vector3::new(slot[0], slot[1], 0.0);
    let (dc00, dc01, dc11) = (slot[2], slot[3], slot[4]);
    let d_alpha = slot[5];
    let d_color_lin = Vector3::new(slot[6], slot[7], slot[8]);
    let d_feature = slot[FIXED_SLOTS..FIXED_SLOTS + dim].to_vec();

    // Activation chains.
    let alpha = g.opacity();
    let opacity_logit = d_alpha * alpha * (1.0 - alpha);
    let color = g.color();
    let color_logit = Vector3::new(
        d_color_lin.x * color.x * (1.0 - color.x),
        d_color_lin.y * color.y * (1.0 - color.y),
        d_color_lin.z * color.z * (1.0 - color.z),
    );

    // Recompute the projection intermediates.
    let x_cam = cam.world_to_camera(&g.position);
    let (x, y, z) = (x_cam.x, x_cam.y, x_cam.z);
    let q_hat = g.normalized_rotation();
    let r = quat_to_matrix(q_hat);
    let s = g.scale();
    let v = Vector3::new(s.x * s.x, s.y * s.y, s.z * s.z);
    let sigma = r * Matrix3::from_diagonal(&v) * r.transpose();
    let m3 = cam.rotation * sigma * cam.rotation.transpose();
    let j = super::project::perspective_jacobian(cam, &x_cam);
    let j0 = Vector3::new(j[0], j[1], j[2]);
    let j1 = Vector3::new(j[3], j[4], j[5]);

    // d cov2d entries -> d M3 (M3 treated as unconstrained 3x3).
    let d_m3 = dc00 * j0 * j0.transpose() + dc01 * j0 * j1.transpose() + dc11 * j1 * j1.transpose();
    // d M3 -> d Sigma.
    let d_sigma = cam.rotation.transpose() * d_m3 * cam.rotation;
    // d Sigma -> d log_scale through Sigma = R diag(v) R^T, v = exp(2 ls).
    let m = r.transpose() * d_sigma * r;
    let log_scale = Vector3::new(
        m[(0, 0)] * 2.0 * v.x,
        m[(1, 1)] * 2.0 * v.y,
        m[(2, 2)] * 2.0 * v.z,
    );
    // d Sigma -> d R -> d quaternion (through normalization).
    let d_r = (d_sigma + d_sigma.transpose()) * r * Matrix3::from_diagonal(&v);
    let d_qhat = quat_grad(q_hat, &d_r);
    let rotation = normalize_backward(g.rotation, q_hat, d_qhat);

    // d cov2d -> d J.
    let dj0 = 2.0 * dc00 * (m3 * j0) + dc01 * (m3 * j1);
    let dj1 = 2.0 * dc11 * (m3 * j1) + dc01 * (m3 * j0);

    // Everything touching the camera-space point.
    let z_inv = 1.0 / z;
    let z_inv2 = z_inv * z_inv;
    let z_inv3 = z_inv2 * z_inv;
    let mut d_xcam = Vector3::new(
        d_mean.x * cam.fx * z_inv,
        d_mean.y * cam.fy * z_inv,
        -d_mean.x * cam.fx * x * z_inv2 - d_mean.y * cam.fy * y * z_inv2,
    );
    d_xcam.x += dj0.z * (-cam.fx * z_inv2);
    d_xcam.y += dj1.z * (-cam.fy * z_inv2);
    d_xcam.z += dj0.x * (-cam.fx * z_inv2)
        + dj0.z * (2.0 * cam.fx * x * z_inv3)
        + dj1.y * (-cam.fy * z_inv2)
        + dj1.z * (2.0 * cam.fy * y * z_inv3);

    let position = cam.rotation.transpose() * d_xcam;

    SplatGrad {
        position,
        log_scale,
        rotation,
        opacity_logit,
        color_logit,
        feature: d_feature,
    }
}

/// dL/d q_hat from dL/dR via the entrywise quaternion-to-matrix derivatives.
fn quat_grad(q: [f64; 4], d_r: &Matrix3<f64>) -> [f64; 4] {
    let [w, x, y, z] = q;
    #[rustfmt::skip]
    let partials: [[[f64; 3]; 3]; 4] = [
        // dR/dw
        [[0.0, -2.0 * z, 2.0 * y], [2.0 * z, 0.0, -2.0 * x], [-2.0 * y, 2.0 * x, 0.0]],
        // dR/dx
        [[0.0, 2.0 * y, 2.0 * z], [2.0 * y, -4.0 * x, -2.0 * w], [2.0 * z, 2.0 * w, -4.0 * x]],
        // dR/dy
        [[-4.0 * y, 2.0 * x, 2.0 * w], [2.0 * x, 0.0, 2.0 * z], [-2.0 * w, 2.0 * z, -4.0 * y]],
        // dR/dz
        [[-4.0 * z, -2.0 * w, 2.0 * x], [2.0 * w, -4.0 * z, 2.0 * y], [2.0 * x, 2.0 * y, 0.0]],
    ];
    let mut out = [0.0f64; 4];
    for (k, p) in partials.iter().enumerate() {
        let mut acc = 0.0;
        for (i, row) in p.iter().enumerate() {
            for (j, &pv) in row.iter().enumerate() {
                acc += d_r[(i, j)] * pv;
            }
        }
        out[k] = acc;
    }
    out
}

/// Backprop through q_hat = q / |q|.
fn normalize_backward(q_raw: [f64; 4], q_hat: [f64; 4], d_qhat: [f64; 4]) -> [f64; 4] {
    let norm = (q_raw.iter().map(|v| v * v).sum::<f64>()).sqrt();
    let dot: f64 = d_qhat.iter().zip(&q_hat).map(|(a, b)| a * b).sum();
    let mut out = [0.0f64; 4];
    for k in 0..4 {
        out[k] = (d_qhat[k] - dot * q_hat[k]) / norm;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::super::render::render;
    use super::*;
    use crate::fixtures::random_scene;
    use rand::{Rng, SeedableRng};

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let (gaussians, cam, bg) = random_scene(3, 5, 16, 16, 2);
        let out = render(&gaussians, &cam, &bg);
        let d_rgb = vec![0.0; 16 * 16 * 3];
        let d_feat = vec![0.0; 16 * 16 * 2];
        let grads = render_backward(&gaussians, &cam, &bg, &out, &d_rgb, &d_feat);
        for i in 0..gaussians.len() {
            assert_eq!(grads.position[i], Vector3::zeros());
            assert_eq!(grads.opacity_logit[i], 0.0);
            assert!(grads.feature_of(i).iter().all(|&v| v == 0.0));
        }
    }

    /// Loss = rendered red channel at one pixel; dL/d(linear color) must be
    /// exactly the compositing weight w at that pixel.
    #[test]
    fn single_gaussian_color_grad_is_weight() {
        let (gaussians, cam, bg) = random_scene(11, 1, 16, 16, 2);
        let out = render(&gaussians, &cam, &bg);
        // Pick the pixel with the largest alpha so the Gaussian contributes.
        let (pix, _) = out
            .alpha
            .data
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        let w = out.alpha.data[pix]; // single Gaussian: w = a = alpha value
        let mut d_rgb = vec![0.0; 16 * 16 * 3];
        d_rgb[pix * 3] = 1.0;
        let d_feat = vec![0.0; 16 * 16 * 2];
        let grads = render_backward(&gaussians, &cam, &bg, &out, &d_rgb, &d_feat);
        let c = gaussians[0].color();
        let expected_logit_grad = w * c.x * (1.0 - c.x);
        assert!(
            (grads.color_logit[0].x - expected_logit_grad).abs() < 1e-12,
            "{} vs {}",
            grads.color_logit[0].x,
            expected_logit_grad
        );
    }

    /// Central finite differences over every parameter of a random scene.
    #[test]
    fn finite_difference_check() {
        for seed in 0..4u64 {
            let (mut gaussians, cam, bg) = random_scene(seed, 6, 16, 16, 3);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
            let d_rgb: Vec<f64> = (0..16 * 16 * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let d_feat: Vec<f64> = (0..16 * 16 * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let loss = |gs: &[Gaussian]| -> f64 {
                let out = render(gs, &cam, &bg);
                out.rgb
                    .data
                    .iter()
                    .zip(&d_rgb)
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
                    + out
                        .features
                        .data
                        .iter()
                        .zip(&d_feat)
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
            };
            let out = render(&gaussians, &cam, &bg);
            let grads = render_backward(&gaussians, &cam, &bg, &out, &d_rgb, &d_feat);

            let eps = 1e-5;
            let n = gaussians.len();
            for gi in 0..n {
                for (name, analytic, dims) in [
                    ("position", grads.position[gi].as_slice().to_vec(), 3),
                    ("log_scale", grads.log_scale[gi].as_slice().to_vec(), 3),
                    ("rotation", grads.rotation[gi].to_vec(), 4),
                    ("opacity", vec![grads.opacity_logit[gi]], 1),
                    ("color", grads.color_logit[gi].as_slice().to_vec(), 3),
                    ("feature", grads.feature_of(gi).to_vec(), 3),
                ] {
                    for k in 0..dims {
                        let read = |g: &Gaussian| -> f64 {
                            match name {
                                "position" => g.position[k],
                                "log_scale" => g.log_scale[k],
                                "rotation" => g.rotation[k],
                                "opacity" => g.opacity_logit,
                                "color" => g.color_logit[k],
                                "feature" => g.feature[k],
                                _ => unreachable!(),
                            }
                        };
                        let write = |g: &mut Gaussian, v: f64| match name {
                            "position" => g.position[k] = v,
                            "log_scale" => g.log_scale[k] = v,
                            "rotation" => g.rotation[k] = v,
                            "opacity" => g.opacity_logit = v,
                            "color" => g.color_logit[k] = v,
                            "feature" => g.feature[k] = v,
                            _ => unreachable!(),
                        };
                        let orig = read(&gaussians[gi]);
                        write(&mut gaussians[gi], orig + eps);
                        let lp = loss(&gaussians);
                        write(&mut gaussians[gi], orig - eps);
                        let lm = loss(&gaussians);
                        write(&mut gaussians[gi], orig);
                        let fd = (lp - lm) / (2.0 * eps);
                        let a = analytic[k];
                        let err = (a - fd).abs();
                        let tol = 1e-4 * fd.abs().max(a.abs()) + 1e-7;
                        assert!(
                            err <= tol,
                            "seed {seed} gaussian {gi} {name}[{k}]: analytic {a} vs fd {fd}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn render_is_permutation_invariant_bitwise() {
        let (gaussians, cam, bg) = random_scene(21, 8, 16, 16, 2);
        let out1 = render(&gaussians, &cam, &bg);
        let mut permuted = gaussians.clone();
        permuted.reverse();
        permuted.swap(0, 3);
        let out2 = render(&permuted, &cam, &bg);
        assert_eq!(out1.rgb.data, out2.rgb.data);
        assert_eq!(out1.features.data, out2.features.data);
        assert_eq!(out1.alpha.data, out2.alpha.data);
    }
}
