//! Multi-view consistent instance feature aggregation.
//!
//! Per instance: the component-wise median feature over valid frames, the
//! median absolute deviation around it, inlier selection by a k*MAD test,
//! and the inlier mean as the view-consistent feature. Each frame's final
//! ground-truth feature blends its own view-specific feature with the
//! view-consistent one.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::image::FeatureMap;
use crate::normalized;
use crate::oracle::{FeatureSeries, InstanceSegment};

/// Absolute floor added to MAD before the k-threshold so that a zero MAD
/// (many identical frames) cannot lock every frame out.
pub const MAD_FLOOR: f64 = 1e-6;

/// How a frame's deviation from the median is tested against k*MAD.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviationRule {
    /// Anomalous if any component exceeds k * (MAD + floor) in that component.
    ComponentWise,
    /// Anomalous if the L2 deviation exceeds k * (scalar MAD of L2 deviations + floor).
    Norm,
}

/// One instance's per-frame features with validity flags.
#[derive(Debug, Clone)]
pub struct InstanceSeries {
    pub instance_id: u32,
    pub dim: usize,
    pub frames: Vec<Option<Vec<f64>>>,
}

impl InstanceSeries {
    pub fn from_feature_series(series: &FeatureSeries, instance_index: usize) -> Self {
        let frames = (0..series.n_frames)
            .map(|j| {
                series
                    .is_valid(instance_index, j)
                    .then(|| series.feature(instance_index, j).to_vec())
            })
            .collect();
        InstanceSeries {
            instance_id: series.instance_ids[instance_index],
            dim: series.dim,
            frames,
        }
    }

    fn valid_features(&self) -> Vec<&Vec<f64>> {
        self.frames.iter().flatten().collect()
    }
}

#[derive(Debug, Clone)]
pub struct AggregationResult {
    pub instance_id: u32,
    pub median: Vec<f64>,
    /// Component-wise MAD (reported under both rules).
    pub mad: Vec<f64>,
    /// Per frame; false for invalid frames.
    pub inliers: Vec<bool>,
    pub inlier_count: usize,
    /// View-consistent feature: inlier mean, renormalized to unit length.
    pub consistent: Vec<f64>,
    /// Per-frame final ground-truth feature:
    /// normalize(w * F_j + (1-w) * consistent) for valid frames.
    pub final_features: Vec<Option<Vec<f64>>>,
    /// Reported deviation per frame: max-component under the component rule,
    /// L2 norm under the norm rule.
    pub deviations: Vec<Option<f64>>,
}

fn median_of(mut values: Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 0 {
        (values[n / 2 - 1] + values[n / 2]) * 0.5
    } else {
        values[n / 2]
    }
}

/// Component-wise median over valid frames; even counts average the middles.
pub fn median_feature(series: &InstanceSeries) -> Result<Vec<f64>> {
    let valid = series.valid_features();
    if valid.is_empty() {
        return Err(Error::NoObservations);
    }
    Ok((0..series.dim)
        .map(|c| median_of(valid.iter().map(|f| f[c]).collect()))
        .collect())
}

/// Component-wise median of absolute deviations from `median`.
pub fn mad(series: &InstanceSeries, median: &[f64]) -> Result<Vec<f64>> {
    let valid = series.valid_features();
    if valid.is_empty() {
        return Err(Error::NoObservations);
    }
    Ok((0..series.dim)
        .map(|c| median_of(valid.iter().map(|f| (f[c] - median[c]).abs()).collect()))
        .collect())
}

/// Full aggregation for one instance under the chosen deviation rule.
/// `blend_weight` is the weight of the view-specific feature in the final
/// per-frame ground truth (0.5 averages the two).
pub fn aggregate(
    series: &InstanceSeries,
    k: f64,
    rule: DeviationRule,
    blend_weight: f64,
) -> Result<AggregationResult> {
    assert!(k > 0.0, "k must be positive");
    let median = median_feature(series)?;
    let mad_vec = mad(series, &median)?;

    let mut deviations: Vec<Option<f64>> = vec![None; series.frames.len()];
    let mut inliers = vec![false; series.frames.len()];
    match rule {
        DeviationRule::ComponentWise => {
            for (j, frame) in series.frames.iter().enumerate() {
                if let Some(f) = frame {
                    let mut ok = true;
                    let mut max_dev: f64 = 0.0;
                    for c in 0..series.dim {
                        let dev = (f[c] - median[c]).abs();
                        max_dev = max_dev.max(dev);
                        if dev > k * (mad_vec[c] + MAD_FLOOR) {
                            ok = false;
                        }
                    }
                    deviations[j] = Some(max_dev);
                    inliers[j] = ok;
                }
            }
        }
        DeviationRule::Norm => {
            let norms: Vec<f64> = series
                .valid_features()
                .iter()
                .map(|f| {
                    f.iter()
                        .zip(&median)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt()
                })
                .collect();
            let scalar_mad = median_of(norms);
            for (j, frame) in series.frames.iter().enumerate() {
                if let Some(f) = frame {
                    let dev = f
                        .iter()
                        .zip(&median)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt();
                    deviations[j] = Some(dev);
                    inliers[j] = dev <= k * (scalar_mad + MAD_FLOOR);
                }
            }
        }
    }

    let inlier_count = inliers.iter().filter(|&&b| b).count();
    let consistent = if inlier_count == 0 {
        median.clone()
    } else {
        let mut mean = vec![0.0; series.dim];
        for (j, frame) in series.frames.iter().enumerate() {
            if inliers[j] {
                let f = frame.as_ref().expect("inlier implies valid");
                for (m, &v) in mean.iter_mut().zip(f) {
                    *m += v;
                }
            }
        }
        for m in mean.iter_mut() {
            *m /= inlier_count as f64;
        }
        normalized(&mean)
    };

    let final_features = series
        .frames
        .iter()
        .map(|frame| {
            frame.as_ref().map(|f| {
                normalized(
                    &f.iter()
                        .zip(&consistent)
                        .map(|(&a, &b)| blend_weight * a + (1.0 - blend_weight) * b)
                        .collect::<Vec<_>>(),
                )
            })
        })
        .collect();

    Ok(AggregationResult {
        instance_id: series.instance_id,
        median,
        mad: mad_vec,
        inliers,
        inlier_count,
        consistent,
        final_features,
        deviations,
    })
}

/// Per-frame ground-truth feature maps: each pixel takes the feature of the
/// segment covering it, background pixels take `background`. Overlapping
/// segments violate the upstream disjointness invariant and are an error.
pub fn build_feature_maps(
    segments: &[InstanceSegment],
    features: &BTreeMap<(u32, usize), Vec<f64>>,
    n_frames: usize,
    width: usize,
    height: usize,
    background: &[f64],
) -> Result<Vec<FeatureMap>> {
    let dim = background.len();
    let mut maps: Vec<FeatureMap> = (0..n_frames)
        .map(|_| {
            let mut m = FeatureMap::new(width, height, dim);
            for p in 0..width * height {
                m.data[p * dim..(p + 1) * dim].copy_from_slice(background);
            }
            m
        })
        .collect();
    let mut owner: Vec<Vec<u32>> = vec![vec![0; width * height]; n_frames];

    for seg in segments {
        let Some(feature) = features.get(&(seg.instance_id, seg.frame)) else {
            continue;
        };
        let map = &mut maps[seg.frame];
        for (p, &m) in seg.mask.data.iter().enumerate() {
            if m != 0 {
                let prev = owner[seg.frame][p];
                if prev != 0 && prev != seg.instance_id {
                    return Err(Error::OverlappingSegments(prev, seg.instance_id, seg.frame));
                }
                owner[seg.frame][p] = seg.instance_id;
                map.data[p * dim..(p + 1) * dim].copy_from_slice(feature);
            }
        }
    }
    Ok(maps)
}

/// PCA basis for optional feature compression, fitted by Jacobi
/// eigendecomposition of the covariance of the supplied rows.
#[derive(Debug, Clone)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// k rows of length d, orthonormal, by decreasing eigenvalue.
    pub basis: Vec<Vec<f64>>,
}

impl Pca {
    pub fn fit(rows: &[Vec<f64>], k: usize) -> Result<Pca> {
        if rows.is_empty() {
            return Err(Error::NoObservations);
        }
        let d = rows[0].len();
        let k = k.min(d);
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, &v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        for m in mean.iter_mut() {
            *m /= n;
        }
        let mut cov = vec![vec![0.0; d]; d];
        for r in rows {
            for i in 0..d {
                let di = r[i] - mean[i];
                for j in i..d {
                    cov[i][j] += di * (r[j] - mean[j]);
                }
            }
        }
        for i in 0..d {
            for j in i..d {
                cov[i][j] /= n;
                cov[j][i] = cov[i][j];
            }
        }
        let (eigenvalues, eigenvectors) = jacobi_eigen(&cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eigenvalues[b].total_cmp(&eigenvalues[a]).then(a.cmp(&b)));
        let basis = order[..k]
            .iter()
            .map(|&col| {
                let mut v: Vec<f64> = (0..d).map(|r| eigenvectors[r][col]).collect();
                // Deterministic sign: largest-magnitude component positive.
                let lead = v
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then(b.0.cmp(&a.0)))
                    .map(|(_, &x)| x)
                    .unwrap_or(1.0);
                if lead < 0.0 {
                    for x in v.iter_mut() {
                        *x = -*x;
                    }
                }
                v
            })
            .collect();
        Ok(Pca { mean, basis })
    }

    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        self.basis
            .iter()
            .map(|b| {
                b.iter()
                    .zip(v)
                    .zip(&self.mean)
                    .map(|((&bi, &vi), &mi)| bi * (vi - mi))
                    .sum()
            })
            .collect()
    }
}

/// Cyclic Jacobi sweeps on a symmetric matrix; returns (eigenvalues,
/// column eigenvectors).
fn jacobi_eigen(m: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let d = m.len();
    let mut a: Vec<Vec<f64>> = m.to_vec();
    let mut v = vec![vec![0.0; d]; d];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _sweep in 0..64 {
        let mut off = 0.0;
        for i in 0..d {
            for j in i + 1..d {
                off += a[i][j] * a[i][j];
            }
        }
        if off < 1e-24 {
            break;
        }
        for p in 0..d {
            for q in p + 1..d {
                if a[p][q].abs() < 1e-18 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..d {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..d {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let vp = row[p];
                    let vq = row[q];
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    ((0..d).map(|i| a[i][i]).collect(), v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series_1d(values: &[f64]) -> InstanceSeries {
        InstanceSeries {
            instance_id: 1,
            dim: 1,
            frames: values.iter().map(|&v| Some(vec![v])).collect(),
        }
    }

    #[test]
    fn median_identical_and_odd() {
        let s = series_1d(&[0.7, 0.7, 0.7]);
        assert_eq!(median_feature(&s).unwrap(), vec![0.7]);
        let s = series_1d(&[0.9, 1.0, 1.1]);
        assert_eq!(median_feature(&s).unwrap(), vec![1.0]);
    }

    #[test]
    fn median_even_count_averages_middles() {
        let s = series_1d(&[1.0, 1.1, 0.9, 5.0]);
        assert!((median_feature(&s).unwrap()[0] - 1.05).abs() < 1e-15);
    }

    #[test]
    fn no_observations_is_an_error() {
        let s = InstanceSeries {
            instance_id: 1,
            dim: 2,
            frames: vec![None, None],
        };
        let err = median_feature(&s).unwrap_err();
        assert!(err.to_string().contains("no observations"));
        assert!(mad(&s, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn mad_hand_computed() {
        let s = series_1d(&[0.5, 0.5, 0.5]);
        let med = median_feature(&s).unwrap();
        assert_eq!(mad(&s, &med).unwrap(), vec![0.0]);

        let s = series_1d(&[1.0, 1.1, 0.9, 5.0]);
        let med = median_feature(&s).unwrap();
        // deviations {0.05, 0.05, 0.15, 3.95} -> MAD 0.10
        assert!((mad(&s, &med).unwrap()[0] - 0.10).abs() < 1e-12);
    }

    #[test]
    fn duplicating_the_median_never_increases_mad() {
        let base = vec![0.2, 0.4, 0.6, 0.9, 1.3];
        let s = series_1d(&base);
        let med = median_feature(&s).unwrap();
        let m0 = mad(&s, &med).unwrap()[0];
        let mut extended = base.clone();
        extended.push(med[0]);
        let s2 = series_1d(&extended);
        let med2 = median_feature(&s2).unwrap();
        assert_eq!(med2[0], med[0]);
        let m1 = mad(&s2, &med2).unwrap()[0];
        assert!(m1 <= m0 + 1e-15, "{m1} > {m0}");
    }

    #[test]
    fn aggregate_identical_features() {
        let s = series_1d(&[0.8, 0.8, 0.8, 0.8]);
        let r = aggregate(&s, 3.0, DeviationRule::ComponentWise, 0.5).unwrap();
        assert_eq!(r.inlier_count, 4);
        assert!((r.consistent[0] - 1.0).abs() < 1e-15); // normalized 1-d
    }

    #[test]
    fn aggregate_excludes_the_outlier() {
        let s = series_1d(&[1.0, 1.1, 0.9, 5.0]);
        let r = aggregate(&s, 3.0, DeviationRule::ComponentWise, 0.5).unwrap();
        assert_eq!(r.inlier_count, 3);
        assert_eq!(r.inliers, vec![true, true, true, false]);
        // mean{1.0, 1.1, 0.9} = 1.0, unit-normalized in 1-d stays 1.0.
        assert!((r.consistent[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn inlier_set_is_permutation_invariant() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let n = rng.gen_range(2..8);
            let dim = rng.gen_range(1..4);
            let frames: Vec<Option<Vec<f64>>> = (0..n)
                .map(|_| Some((0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()))
                .collect();
            let s = InstanceSeries {
                instance_id: 1,
                dim,
                frames: frames.clone(),
            };
            let r = aggregate(&s, 3.0, DeviationRule::ComponentWise, 0.5).unwrap();
            // Reverse the frame order; inlier flags must follow the frames.
            let mut rev = frames.clone();
            rev.reverse();
            let s2 = InstanceSeries {
                instance_id: 1,
                dim,
                frames: rev,
            };
            let r2 = aggregate(&s2, 3.0, DeviationRule::ComponentWise, 0.5).unwrap();
            let mut flags = r.inliers.clone();
            flags.reverse();
            assert_eq!(flags, r2.inliers);
            assert_eq!(r.consistent, r2.consistent);
        }
    }

    #[test]
    fn feature_maps_piecewise_constant() {
        use crate::mask::Mask;
        let (w, h) = (8, 4);
        let mut left = Mask::new(w, h);
        let mut right = Mask::new(w, h);
        for y in 0..h {
            for x in 0..w {
                if x < w / 2 {
                    left.set(x, y, true);
                } else {
                    right.set(x, y, true);
                }
            }
        }
        let segments = vec![
            InstanceSegment {
                instance_id: 1,
                frame: 0,
                mask: left.clone(),
            },
            InstanceSegment {
                instance_id: 2,
                frame: 0,
                mask: right,
            },
        ];
        let mut feats = BTreeMap::new();
        feats.insert((1u32, 0usize), vec![1.0, 0.0]);
        feats.insert((2u32, 0usize), vec![0.0, 1.0]);
        let maps = build_feature_maps(&segments, &feats, 1, w, h, &[0.5, 0.5]).unwrap();
        assert_eq!(maps[0].get(0, 0), &[1.0, 0.0]);
        assert_eq!(maps[0].get(7, 3), &[0.0, 1.0]);

        // Single full-frame segment -> constant map.
        let full = vec![InstanceSegment {
            instance_id: 1,
            frame: 0,
            mask: Mask::filled(w, h, true),
        }];
        let maps = build_feature_maps(&full, &feats, 1, w, h, &[0.5, 0.5]).unwrap();
        assert!(maps[0].data.chunks(2).all(|c| c == [1.0, 0.0]));

        // Background-only frame -> background vector everywhere.
        let maps = build_feature_maps(&[], &feats, 1, w, h, &[0.5, 0.5]).unwrap();
        assert!(maps[0].data.chunks(2).all(|c| c == [0.5, 0.5]));

        // Overlap -> error.
        let overlapping = vec![
            InstanceSegment {
                instance_id: 1,
                frame: 0,
                mask: left.clone(),
            },
            InstanceSegment {
                instance_id: 2,
                frame: 0,
                mask: left,
            },
        ];
        let err = build_feature_maps(&overlapping, &feats, 1, w, h, &[0.5, 0.5]).unwrap_err();
        assert!(err.to_string().contains("overlapping segments"));
    }

    #[test]
    fn pca_recovers_low_rank_subspace() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let d = 8;
        let b1: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b2: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let rows: Vec<Vec<f64>> = (0..200)
            .map(|_| {
                let a = rng.gen_range(-2.0..2.0);
                let b = rng.gen_range(-2.0..2.0);
                (0..d).map(|i| a * b1[i] + b * b2[i]).collect()
            })
            .collect();
        let pca = Pca::fit(&rows, 2).unwrap();
        // Projection of every row reconstructs it (rows live in a 2-dim span).
        for r in rows.iter().take(20) {
            let p = pca.project(r);
            let recon: Vec<f64> = (0..d)
                .map(|i| pca.mean[i] + p[0] * pca.basis[0][i] + p[1] * pca.basis[1][i])
                .collect();
            for (a, b) in r.iter().zip(&recon) {
                assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            }
        }
    }
}
