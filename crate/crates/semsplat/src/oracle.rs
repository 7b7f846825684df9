//! Ground-truth-derived perception providers with configurable corruption.
//!
//! These stand in for learned video segmentation/tracking and per-crop
//! feature extraction while preserving their interfaces: instance masks
//! tracked across frames, one embedding per (instance, frame), candidate
//! mask dedup, and an embedding table that doubles as the query encoder.
//! Occlusion corrupts features by blending the instance vector toward the
//! occluders' vectors, so downstream robust aggregation has real work to do.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixtures::derive_seed;
use crate::mask::Mask;
use crate::normalize_in_place;
use crate::scene::{visibility, GroundTruthFrame, SceneSpec};
use crate::storage::{self, Tensor};

/// Binary mask of instance `id` in frame `frame`, identity-stable across frames.
#[derive(Debug, Clone)]
pub struct InstanceSegment {
    pub instance_id: u32,
    pub frame: usize,
    pub mask: Mask,
}

/// Per-category unit embeddings, canonical ("generic concept") vectors for
/// relevancy scoring, and a background vector. Acts as the query encoder:
/// a category label maps to its table vector.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    pub dim: usize,
    categories: Vec<String>,
    vectors: Vec<Vec<f64>>,
    pub background: Vec<f64>,
    pub canonicals: Vec<Vec<f64>>,
}

impl EmbeddingTable {
    /// Build unit embeddings for every category, `n_canonicals` canonical
    /// vectors, and a background vector, rejecting draws whose pairwise
    /// cosine similarity reaches 0.9. The first canonical is the background
    /// vector itself, anchoring "generic" content in relevancy scoring.
    pub fn build(categories: &[String], dim: usize, n_canonicals: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xe, 0xb));
        let mut all: Vec<Vec<f64>> = Vec::new();
        let mut draw = |rng: &mut ChaCha8Rng, all: &mut Vec<Vec<f64>>| -> Vec<f64> {
            loop {
                let mut v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
                normalize_in_place(&mut v);
                if crate::norm(&v) < 0.5 {
                    continue;
                }
                if all.iter().all(|u| crate::dot(u, &v).abs() < 0.9) {
                    all.push(v.clone());
                    return v;
                }
            }
        };

        let background = draw(&mut rng, &mut all);
        let vectors: Vec<Vec<f64>> = categories.iter().map(|_| draw(&mut rng, &mut all)).collect();
        let mut canonicals = vec![background.clone()];
        for _ in 1..n_canonicals.max(1) {
            canonicals.push(draw(&mut rng, &mut all));
        }
        EmbeddingTable {
            dim,
            categories: categories.to_vec(),
            vectors,
            background,
            canonicals,
        }
    }

    pub fn encode(&self, category: &str) -> Result<&[f64]> {
        self.categories
            .iter()
            .position(|c| c == category)
            .map(|i| self.vectors[i].as_slice())
            .ok_or_else(|| Error::UnknownCategory(category.to_string()))
    }

    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    /// Structured-text persistence: one `category,v0,...,vd` line per entry.
    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let mut text = format!("dim={}\n", self.dim);
        let fmt = |v: &[f64]| {
            v.iter()
                .map(|x| format!("{x:.17e}"))
                .collect::<Vec<_>>()
                .join(",")
        };
        text.push_str(&format!("background,{}\n", fmt(&self.background)));
        for (i, c) in self.canonicals.iter().enumerate() {
            text.push_str(&format!("canonical{i},{}\n", fmt(c)));
        }
        for (name, v) in self.categories.iter().zip(&self.vectors) {
            text.push_str(&format!("{name},{}\n", fmt(v)));
        }
        storage::write_text(path, &text)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let text = storage::read_text(&path)?;
        let mut lines = text.lines();
        let dim_line = lines
            .next()
            .ok_or_else(|| Error::InvalidConfig("empty embedding table".into()))?;
        let dim: usize = dim_line
            .strip_prefix("dim=")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::InvalidConfig("embedding table missing dim".into()))?;
        let mut background = Vec::new();
        let mut canonicals = Vec::new();
        let mut categories = Vec::new();
        let mut vectors = Vec::new();
        for line in lines {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            let name = parts
                .next()
                .ok_or_else(|| Error::InvalidConfig("bad embedding row".into()))?;
            let v: Vec<f64> = parts
                .map(|p| {
                    p.trim()
                        .parse()
                        .map_err(|_| Error::InvalidConfig(format!("bad float in row {name}")))
                })
                .collect::<Result<_>>()?;
            if v.len() != dim {
                return Err(Error::ShapeMismatch(format!(
                    "embedding row {name}: {} values, dim {dim}",
                    v.len()
                )));
            }
            if name == "background" {
                background = v;
            } else if name.starts_with("canonical") {
                canonicals.push(v);
            } else {
                categories.push(name.to_string());
                vectors.push(v);
            }
        }
        Ok(EmbeddingTable {
            dim,
            categories,
            vectors,
            background,
            canonicals,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorruptionConfig {
    /// Per-component Gaussian noise applied before renormalization.
    pub feature_noise_sigma: f64,
    /// Probability per frame that two tracked ids swap.
    pub id_switch_prob: f64,
    /// Candidate masks per instance when simulating proposal dedup
    /// (0 disables the candidate path; tracking uses ground truth directly).
    pub candidates_per_instance: usize,
    /// Pixel magnitude of candidate mask perturbation.
    pub mask_perturb: usize,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        CorruptionConfig {
            feature_noise_sigma: 0.0,
            id_switch_prob: 0.0,
            candidates_per_instance: 0,
            mask_perturb: 0,
        }
    }
}

impl CorruptionConfig {
    pub fn clean() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.id_switch_prob) {
            return Err(Error::InvalidConfig("id_switch_prob must be in [0,1]".into()));
        }
        if self.feature_noise_sigma < 0.0 {
            return Err(Error::InvalidConfig("feature_noise_sigma must be >= 0".into()));
        }
        Ok(())
    }
}

/// A proposal mask with its quality scores.
#[derive(Debug, Clone)]
pub struct MaskCandidate {
    pub mask: Mask,
    pub predicted_iou: f64,
    pub stability: f64,
}

/// Drop candidates below `score_min` on either score, then greedily keep
/// masks in descending combined-score order, rejecting any whose overlap
/// rate (intersection over smaller area) with a kept mask exceeds
/// `overlap_threshold`. Output overlap is therefore <= the threshold.
pub fn dedup_masks(
    candidates: &[MaskCandidate],
    score_min: f64,
    overlap_threshold: f64,
) -> Vec<Mask> {
    let mut order: Vec<usize> = (0..candidates.len())
        .filter(|&i| {
            candidates[i].predicted_iou >= score_min && candidates[i].stability >= score_min
        })
        .collect();
    order.sort_by(|&a, &b| {
        let sa = candidates[a].predicted_iou * candidates[a].stability;
        let sb = candidates[b].predicted_iou * candidates[b].stability;
        sb.total_cmp(&sa).then(a.cmp(&b))
    });
    let mut kept: Vec<Mask> = Vec::new();
    for i in order {
        let m = &candidates[i].mask;
        if kept.iter().all(|k| k.overlap_rate(m) <= overlap_threshold) {
            kept.push(m.clone());
        }
    }
    kept
}

/// One recorded identity swap: at `frame`, ids `a` and `b` exchanged masks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IdSwitch {
    pub frame: usize,
    pub a: u32,
    pub b: u32,
}

#[derive(Debug, Clone)]
pub struct TrackOutput {
    pub segments: Vec<InstanceSegment>,
    pub switches: Vec<IdSwitch>,
}

/// Track instances across the sequence. Clean config reproduces the ground
/// truth instance maps with stable ids; `id_switch_prob` > 0 swaps a seeded
/// pair of visible ids in a frame, stressing downstream aggregation the way
/// tracking failures would.
pub fn track(frames: &[GroundTruthFrame], cfg: &CorruptionConfig, seed: u64) -> TrackOutput {
    assert!(!frames.is_empty(), "track needs at least one frame");
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x7a, 0xc4));
    let mut segments = Vec::new();
    let mut switches = Vec::new();
    for f in frames {
        let present = f.instance_ids.present_ids();
        // Identity map by default; a seeded swap with probability p.
        let mut remap: Vec<(u32, u32)> = present.iter().map(|&id| (id, id)).collect();
        if f.index > 0 && present.len() >= 2 && rng.gen_range(0.0..1.0) < cfg.id_switch_prob {
            let i = rng.gen_range(0..present.len());
            let mut j = rng.gen_range(0..present.len() - 1);
            if j >= i {
                j += 1;
            }
            remap[i].1 = present[j];
            remap[j].1 = present[i];
            switches.push(IdSwitch {
                frame: f.index,
                a: present[i],
                b: present[j],
            });
        }
        for (source_id, assigned_id) in remap {
            segments.push(InstanceSegment {
                instance_id: assigned_id,
                frame: f.index,
                mask: Mask::from_id_map(&f.instance_ids, source_id),
            });
        }
    }
    TrackOutput { segments, switches }
}

/// Simulate proposal generation for one frame: `candidates_per_instance`
/// perturbed copies of each ground-truth mask with seeded quality scores.
pub fn generate_candidates(
    frame: &GroundTruthFrame,
    cfg: &CorruptionConfig,
    seed: u64,
) -> Vec<MaskCandidate> {
    let mut out = Vec::new();
    for id in frame.instance_ids.present_ids() {
        let gt = Mask::from_id_map(&frame.instance_ids, id);
        for c in 0..cfg.candidates_per_instance.max(1) {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                seed,
                (frame.index as u64) << 20 | id as u64,
                c as u64,
            ));
            let mask = if cfg.mask_perturb == 0 {
                gt.clone()
            } else {
                shift_mask(
                    &gt,
                    rng.gen_range(-(cfg.mask_perturb as i64)..=cfg.mask_perturb as i64),
                    rng.gen_range(-(cfg.mask_perturb as i64)..=cfg.mask_perturb as i64),
                )
            };
            out.push(MaskCandidate {
                mask,
                predicted_iou: rng.gen_range(0.85..1.0),
                stability: rng.gen_range(0.85..1.0),
            });
        }
    }
    out
}

fn shift_mask(mask: &Mask, dx: i64, dy: i64) -> Mask {
    let mut out = Mask::new(mask.width, mask.height);
    for y in 0..mask.height {
        for x in 0..mask.width {
            let sx = x as i64 - dx;
            let sy = y as i64 - dy;
            if sx >= 0
                && sy >= 0
                && (sx as usize) < mask.width
                && (sy as usize) < mask.height
                && mask.get(sx as usize, sy as usize)
            {
                out.set(x, y, true);
            }
        }
    }
    out
}

/// Per-view instance feature: the category vector blended toward the
/// occluders' mean vector by (1 - visibility), plus optional seeded noise,
/// renormalized to unit length.
pub fn extract_feature(
    segment: &InstanceSegment,
    frame: &GroundTruthFrame,
    spec: &SceneSpec,
    table: &EmbeddingTable,
    cfg: &CorruptionConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    if segment.mask.is_empty() {
        return Err(Error::EmptySegment);
    }
    let category = spec
        .category_of(segment.instance_id)
        .ok_or(Error::UnknownCategory(format!(
            "instance {}",
            segment.instance_id
        )))?;
    let e_cat = table.encode(category)?;
    let vis = visibility(frame, segment.instance_id, spec);
    let e_occ = occluder_vector(segment.instance_id, frame, spec, table)?;

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
        seed,
        segment.instance_id as u64,
        segment.frame as u64,
    ));
    let v = vis.fraction;
    let mut f: Vec<f64> = e_cat
        .iter()
        .zip(&e_occ)
        .map(|(&c, &o)| v * c + (1.0 - v) * o)
        .collect();
    if cfg.feature_noise_sigma > 0.0 {
        for x in f.iter_mut() {
            // Box-Muller keeps the draw identical across rand versions.
            let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            let n = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
            *x += cfg.feature_noise_sigma * n;
        }
    }
    normalize_in_place(&mut f);
    Ok(f)
}

/// Area-weighted mean embedding of the instances occluding `instance_id`
/// in this frame; the background vector when nothing occludes it.
fn occluder_vector(
    instance_id: u32,
    frame: &GroundTruthFrame,
    spec: &SceneSpec,
    table: &EmbeddingTable,
) -> Result<Vec<f64>> {
    // Pixels of the unoccluded projection stolen by nearer instances.
    let oi = instance_id as usize - 1;
    let obj = &spec.objects[oi];
    let center = obj.center_at(frame.index, spec.frames);
    let mut counts: std::collections::BTreeMap<u32, usize> = std::collections::BTreeMap::new();
    for py in 0..frame.camera.height {
        for px in 0..frame.camera.width {
            let (origin, dir) = frame.camera.pixel_ray(px, py);
            if scene_intersects(obj, &center, &origin, &dir) {
                let actual = frame.instance_ids.get(px, py);
                if actual != instance_id && actual != 0 {
                    *counts.entry(actual).or_insert(0) += 1;
                }
            }
        }
    }
    if counts.is_empty() {
        return Ok(table.background.clone());
    }
    let total: usize = counts.values().sum();
    let mut out = vec![0.0; table.dim];
    for (id, count) in counts {
        let cat = spec
            .category_of(id)
            .ok_or(Error::UnknownCategory(format!("instance {id}")))?;
        let e = table.encode(cat)?;
        let w = count as f64 / total as f64;
        for (o, &ev) in out.iter_mut().zip(e) {
            *o += w * ev;
        }
    }
    Ok(out)
}

fn scene_intersects(
    obj: &crate::scene::ObjectSpec,
    center: &nalgebra::Vector3<f64>,
    origin: &nalgebra::Vector3<f64>,
    dir: &nalgebra::Vector3<f64>,
) -> bool {
    use crate::scene::Shape;
    match &obj.shape {
        Shape::Sphere { radius } => {
            let oc = origin - center;
            let b = oc.dot(dir);
            let c = oc.dot(&oc) - radius * radius;
            b * b - c >= 0.0 && (-b + (b * b - c).sqrt()) > 1e-6
        }
        Shape::Box { half_extents } => {
            let mut t_min = f64::NEG_INFINITY;
            let mut t_max = f64::INFINITY;
            for k in 0..3 {
                let h = half_extents[k];
                let o = origin[k] - center[k];
                let d = dir[k];
                if d.abs() < 1e-12 {
                    if o.abs() > h {
                        return false;
                    }
                    continue;
                }
                let (t0, t1) = {
                    let a = (-h - o) / d;
                    let b = (h - o) / d;
                    if a < b {
                        (a, b)
                    } else {
                        (b, a)
                    }
                };
                t_min = t_min.max(t0);
                t_max = t_max.min(t1);
                if t_min > t_max {
                    return false;
                }
            }
            t_min > 1e-6
        }
    }
}

/// Per-(instance, frame) features with a validity flag. Instances are
/// addressed by their 1-based scene ids.
#[derive(Debug, Clone)]
pub struct FeatureSeries {
    pub instance_ids: Vec<u32>,
    pub n_frames: usize,
    pub dim: usize,
    /// Flat (instance, frame, component) features.
    pub features: Vec<f64>,
    /// Flat (instance, frame) validity.
    pub valid: Vec<u8>,
}

impl FeatureSeries {
    pub fn feature(&self, instance_index: usize, frame: usize) -> &[f64] {
        let off = (instance_index * self.n_frames + frame) * self.dim;
        &self.features[off..off + self.dim]
    }

    pub fn is_valid(&self, instance_index: usize, frame: usize) -> bool {
        self.valid[instance_index * self.n_frames + frame] != 0
    }

    pub fn save(&self, dir: impl AsRef<std::path::Path>) -> Result<()> {
        let dir = dir.as_ref();
        storage::create_dir_all(dir)?;
        storage::write_tensor(
            dir.join("features.estf"),
            &Tensor::f64(
                vec![
                    self.instance_ids.len() as u32,
                    self.n_frames as u32,
                    self.dim as u32,
                ],
                self.features.clone(),
            ),
        )?;
        storage::write_tensor(
            dir.join("validity.estf"),
            &Tensor::u8(
                vec![self.instance_ids.len() as u32, self.n_frames as u32],
                self.valid.clone(),
            ),
        )?;
        storage::write_tensor(
            dir.join("instance_ids.estf"),
            &Tensor::u32(
                vec![self.instance_ids.len() as u32],
                self.instance_ids.clone(),
            ),
        )
    }

    pub fn load(dir: impl AsRef<std::path::Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let f = storage::read_tensor(dir.join("features.estf"))?;
        let v = storage::read_tensor(dir.join("validity.estf"))?;
        let ids = storage::read_tensor(dir.join("instance_ids.estf"))?;
        let instance_ids = match ids.data {
            crate::storage::TensorData::U32(v) => v,
            _ => return Err(Error::ShapeMismatch("instance ids must be u32".into())),
        };
        let valid = match v.data {
            crate::storage::TensorData::U8(v) => v,
            _ => return Err(Error::ShapeMismatch("validity must be u8".into())),
        };
        Ok(FeatureSeries {
            instance_ids,
            n_frames: f.dims[1] as usize,
            dim: f.dims[2] as usize,
            features: f.as_f64(),
            valid,
        })
    }
}

/// Extract features for every tracked segment. Seeds derive from
/// (instance, frame), so the parallel order cannot change results.
pub fn extract_all_features(
    segments: &[InstanceSegment],
    frames: &[GroundTruthFrame],
    spec: &SceneSpec,
    table: &EmbeddingTable,
    cfg: &CorruptionConfig,
    seed: u64,
) -> Result<FeatureSeries> {
    let n_frames = frames.len();
    let mut instance_ids: Vec<u32> = segments.iter().map(|s| s.instance_id).collect();
    instance_ids.sort_unstable();
    instance_ids.dedup();
    let dim = table.dim;

    let results: Vec<(usize, usize, Vec<f64>)> = segments
        .par_iter()
        .filter(|s| !s.mask.is_empty())
        .map(|s| {
            let idx = instance_ids.binary_search(&s.instance_id).expect("id known");
            let f = extract_feature(s, &frames[s.frame], spec, table, cfg, seed)?;
            Ok((idx, s.frame, f))
        })
        .collect::<Result<_>>()?;

    let mut features = vec![0.0; instance_ids.len() * n_frames * dim];
    let mut valid = vec![0u8; instance_ids.len() * n_frames];
    for (idx, frame, f) in results {
        let off = (idx * n_frames + frame) * dim;
        features[off..off + dim].copy_from_slice(&f);
        valid[idx * n_frames + frame] = 1;
    }
    Ok(FeatureSeries {
        instance_ids,
        n_frames,
        dim,
        features,
        valid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{default_benchmark, generate};

    fn disc_mask(w: usize, h: usize, cx: f64, cy: f64, r: f64) -> Mask {
        let mut m = Mask::new(w, h);
        for y in 0..h {
            for x in 0..w {
                let dx = x as f64 - cx;
                let dy = y as f64 - cy;
                if dx * dx + dy * dy <= r * r {
                    m.set(x, y, true);
                }
            }
        }
        m
    }

    #[test]
    fn dedup_keeps_higher_scored_duplicate() {
        let m = disc_mask(32, 32, 16.0, 16.0, 8.0);
        let candidates = vec![
            MaskCandidate {
                mask: m.clone(),
                predicted_iou: 0.9,
                stability: 0.9,
            },
            MaskCandidate {
                mask: m.clone(),
                predicted_iou: 0.8,
                stability: 0.8,
            },
        ];
        let kept = dedup_masks(&candidates, 0.7, 0.7);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0], m);
    }

    #[test]
    fn dedup_keeps_disjoint_masks() {
        let a = disc_mask(32, 32, 8.0, 8.0, 5.0);
        let b = disc_mask(32, 32, 24.0, 24.0, 5.0);
        let candidates = vec![
            MaskCandidate {
                mask: a,
                predicted_iou: 0.95,
                stability: 0.9,
            },
            MaskCandidate {
                mask: b,
                predicted_iou: 0.85,
                stability: 0.92,
            },
        ];
        assert_eq!(dedup_masks(&candidates, 0.8, 0.7).len(), 2);
    }

    #[test]
    fn dedup_drops_low_scores_and_empty_input() {
        assert!(dedup_masks(&[], 0.8, 0.7).is_empty());
        let m = disc_mask(16, 16, 8.0, 8.0, 4.0);
        let candidates = vec![MaskCandidate {
            mask: m,
            predicted_iou: 0.5,
            stability: 0.9,
        }];
        assert!(dedup_masks(&candidates, 0.8, 0.7).is_empty());
    }

    #[test]
    fn dedup_recovers_sources_from_perturbed_copies() {
        let sources = [
            disc_mask(64, 64, 20.0, 20.0, 10.0),
            disc_mask(64, 64, 45.0, 45.0, 10.0),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut candidates = Vec::new();
        for m in &sources {
            for _ in 0..5 {
                let dx = rng.gen_range(-1i64..=1);
                let dy = rng.gen_range(-1i64..=1);
                candidates.push(MaskCandidate {
                    mask: shift_mask(m, dx, dy),
                    predicted_iou: rng.gen_range(0.85..1.0),
                    stability: rng.gen_range(0.85..1.0),
                });
            }
        }
        let kept = dedup_masks(&candidates, 0.8, 0.7);
        assert_eq!(kept.len(), 2, "expected exactly the two sources");
        for k in &kept {
            let best = sources.iter().map(|s| s.iou(k)).fold(0.0, f64::max);
            assert!(best > 0.8, "survivor IoU {best}");
        }
    }

    #[test]
    fn clean_track_reproduces_ground_truth() {
        let spec = default_benchmark(9);
        let frames = generate(&spec).unwrap();
        let out = track(&frames[..5], &CorruptionConfig::clean(), 1);
        assert!(out.switches.is_empty());
        for seg in &out.segments {
            let gt = Mask::from_id_map(&frames[seg.frame].instance_ids, seg.instance_id);
            assert_eq!(seg.mask, gt);
        }
    }

    #[test]
    fn forced_switch_swaps_every_frame() {
        let mut spec = default_benchmark(9);
        // Keep only the first two static objects so exactly one pair exists.
        spec.objects.truncate(2);
        spec.frames = 6;
        let frames = generate(&spec).unwrap();
        let cfg = CorruptionConfig {
            id_switch_prob: 1.0,
            ..CorruptionConfig::clean()
        };
        let out = track(&frames, &cfg, 5);
        // Every frame after the first gets a swap.
        assert_eq!(out.switches.len(), frames.len() - 1);
        for sw in &out.switches {
            assert_ne!(sw.a, sw.b);
        }
        // Swapped masks really carry the other instance's pixels.
        let sw = out.switches[0];
        let seg = out
            .segments
            .iter()
            .find(|s| s.frame == sw.frame && s.instance_id == sw.a)
            .unwrap();
        let gt_b = Mask::from_id_map(&frames[sw.frame].instance_ids, sw.b);
        assert_eq!(seg.mask, gt_b);
    }

    #[test]
    fn seeded_track_replays_exactly() {
        let spec = default_benchmark(11);
        let frames = generate(&spec).unwrap();
        let cfg = CorruptionConfig {
            id_switch_prob: 0.1,
            ..CorruptionConfig::clean()
        };
        let a = track(&frames, &cfg, 77);
        let b = track(&frames, &cfg, 77);
        assert_eq!(a.switches, b.switches);
        assert!(!a.switches.is_empty(), "0.1 over 59 frames should switch");
    }

    #[test]
    fn unoccluded_noiseless_feature_is_category_vector() {
        let spec = default_benchmark(13);
        let frames = generate(&spec).unwrap();
        let table = EmbeddingTable::build(&spec.categories(), 16, 4, 13);
        // "mug" (id 1) is static; find a frame where it is fully visible.
        let frame = frames
            .iter()
            .find(|f| visibility(f, 1, &spec).fraction == 1.0)
            .expect("mug unoccluded somewhere");
        let seg = InstanceSegment {
            instance_id: 1,
            frame: frame.index,
            mask: Mask::from_id_map(&frame.instance_ids, 1),
        };
        let f = extract_feature(&seg, frame, &spec, &table, &CorruptionConfig::clean(), 0).unwrap();
        let e = table.encode("mug").unwrap();
        for (a, b) in f.iter().zip(e) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn fully_occluded_feature_is_occluder_vector() {
        use crate::scene::{CameraPath, Motion, ObjectSpec, SceneSpec, Shape};
        let spec = SceneSpec {
            name: "occluded".into(),
            frames: 1,
            width: 32,
            height: 32,
            seed: 2,
            light_dir: [0.0, 1.0, -0.3],
            background: [0.1, 0.1, 0.1],
            camera: CameraPath {
                base_eye: [0.0, 0.0, -4.0],
                look_at: [0.0, 0.0, 0.0],
                fov_degrees: 50.0,
                arc_degrees: 0.0,
                jitter_degrees: 0.0,
            },
            objects: vec![
                ObjectSpec {
                    category: "hidden".into(),
                    shape: Shape::Sphere { radius: 0.5 },
                    center: [0.0, 0.0, 1.0],
                    color: [0.8, 0.1, 0.1],
                    transient: false,
                    motion: Motion::Fixed,
                },
                ObjectSpec {
                    category: "wall".into(),
                    shape: Shape::Box {
                        half_extents: [2.0, 2.0, 0.1],
                    },
                    center: [0.0, 0.0, -1.0],
                    color: [0.1, 0.8, 0.1],
                    transient: false,
                    motion: Motion::Fixed,
                },
            ],
        };
        let frames = generate(&spec).unwrap();
        let table = EmbeddingTable::build(&spec.categories(), 8, 4, 5);
        // The hidden sphere has no pixels: its GT mask is empty, so build
        // the segment mask from its unoccluded projection instead (a tracker
        // following it from earlier frames would still carry a region).
        let seg = InstanceSegment {
            instance_id: 1,
            frame: 0,
            mask: Mask::filled(32, 32, true),
        };
        let f = extract_feature(&seg, &frames[0], &spec, &table, &CorruptionConfig::clean(), 0)
            .unwrap();
        let wall = crate::normalized(table.encode("wall").unwrap());
        for (a, b) in f.iter().zip(&wall) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn half_visible_feature_is_closed_form_blend() {
        use crate::scene::{CameraPath, Motion, ObjectSpec, SceneSpec, Shape};
        let spec = SceneSpec {
            name: "half".into(),
            frames: 1,
            width: 64,
            height: 64,
            seed: 2,
            light_dir: [0.0, 1.0, -0.3],
            background: [0.1, 0.1, 0.1],
            camera: CameraPath {
                base_eye: [0.0, 0.0, -4.0],
                look_at: [0.0, 0.0, 0.0],
                fov_degrees: 50.0,
                arc_degrees: 0.0,
                jitter_degrees: 0.0,
            },
            objects: vec![
                ObjectSpec {
                    category: "target".into(),
                    shape: Shape::Sphere { radius: 1.0 },
                    center: [0.0, 0.0, 0.0],
                    color: [0.8, 0.1, 0.1],
                    transient: false,
                    motion: Motion::Fixed,
                },
                ObjectSpec {
                    category: "curtain".into(),
                    shape: Shape::Box {
                        half_extents: [2.0, 4.0, 0.05],
                    },
                    center: [-2.0, 0.0, -2.0],
                    color: [0.1, 0.8, 0.1],
                    transient: false,
                    motion: Motion::Fixed,
                },
            ],
        };
        let frames = generate(&spec).unwrap();
        let table = EmbeddingTable::build(&spec.categories(), 8, 4, 5);
        let vis = visibility(&frames[0], 1, &spec);
        assert!((vis.fraction - 0.5).abs() < 0.05);
        let seg = InstanceSegment {
            instance_id: 1,
            frame: 0,
            mask: Mask::from_id_map(&frames[0].instance_ids, 1),
        };
        let f = extract_feature(&seg, &frames[0], &spec, &table, &CorruptionConfig::clean(), 0)
            .unwrap();
        let e_t = table.encode("target").unwrap();
        let e_c = table.encode("curtain").unwrap();
        let v = vis.fraction;
        let expected = crate::normalized(
            &e_t.iter()
                .zip(e_c)
                .map(|(&a, &b)| v * a + (1.0 - v) * b)
                .collect::<Vec<_>>(),
        );
        for (a, b) in f.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_mask_is_an_error() {
        let spec = default_benchmark(3);
        let frames = generate(&spec).unwrap();
        let table = EmbeddingTable::build(&spec.categories(), 8, 4, 3);
        let seg = InstanceSegment {
            instance_id: 1,
            frame: 0,
            mask: Mask::new(64, 64),
        };
        let err =
            extract_feature(&seg, &frames[0], &spec, &table, &CorruptionConfig::clean(), 0)
                .unwrap_err();
        assert!(err.to_string().contains("empty segment"));
    }

    #[test]
    fn features_are_unit_norm_even_with_noise() {
        let spec = default_benchmark(17);
        let frames = generate(&spec).unwrap();
        let table = EmbeddingTable::build(&spec.categories(), 16, 4, 17);
        let cfg = CorruptionConfig {
            feature_noise_sigma: 0.3,
            ..CorruptionConfig::clean()
        };
        let tracked = track(&frames[..8], &cfg, 17);
        let series =
            extract_all_features(&tracked.segments, &frames, &spec, &table, &cfg, 17).unwrap();
        for i in 0..series.instance_ids.len() {
            for j in 0..8 {
                if series.is_valid(i, j) {
                    let n = crate::norm(series.feature(i, j));
                    assert!((n - 1.0).abs() < 1e-9, "norm {n}");
                }
            }
        }
    }

    #[test]
    fn embedding_table_round_trip_and_contract() {
        let cats: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let table = EmbeddingTable::build(&cats, 16, 4, 42);
        assert_eq!(table.canonicals.len(), 4);
        assert_eq!(table.canonicals[0], table.background);
        // Pairwise similarity below 0.9 for distinct categories.
        for i in 0..cats.len() {
            assert!((crate::norm(table.encode(&cats[i]).unwrap()) - 1.0).abs() < 1e-12);
            for j in i + 1..cats.len() {
                let c = crate::dot(
                    table.encode(&cats[i]).unwrap(),
                    table.encode(&cats[j]).unwrap(),
                );
                assert!(c.abs() < 0.9);
            }
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("table.txt");
        table.save(&path).unwrap();
        let back = EmbeddingTable::load(&path).unwrap();
        assert_eq!(back.dim, table.dim);
        assert_eq!(back.background, table.background);
        assert_eq!(back.encode("b").unwrap(), table.encode("b").unwrap());
        assert!(back.encode("zzz").is_err());
    }
}
