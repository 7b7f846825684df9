//! Checkpoint persistence: one tensor file per parameter group plus a
//! small manifest. Parameters are stored as f64 so reloading reproduces
//! the exact in-memory training state.

use std::path::Path;

use nalgebra::Vector3;

use super::Gaussian;
use crate::error::{Error, Result};
use crate::storage::{self, Tensor};

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub gaussians: Vec<Gaussian>,
    pub iteration: usize,
}

const GROUPS: [&str; 6] = [
    "positions",
    "log_scales",
    "rotations",
    "opacity_logits",
    "colors",
    "features",
];

pub fn save_checkpoint(dir: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let dir = dir.as_ref();
    storage::create_dir_all(dir)?;
    let n = ckpt.gaussians.len() as u32;
    let dim = ckpt.gaussians.first().map_or(0, |g| g.feature.len()) as u32;

    let mut positions = Vec::with_capacity((n * 3) as usize);
    let mut log_scales = Vec::with_capacity((n * 3) as usize);
    let mut rotations = Vec::with_capacity((n * 4) as usize);
    let mut opacity = Vec::with_capacity(n as usize);
    let mut colors = Vec::with_capacity((n * 3) as usize);
    let mut features = Vec::with_capacity((n * dim) as usize);
    for g in &ckpt.gaussians {
        positions.extend_from_slice(g.position.as_slice());
        log_scales.extend_from_slice(g.log_scale.as_slice());
        rotations.extend_from_slice(&g.rotation);
        opacity.push(g.opacity_logit);
        colors.extend_from_slice(g.color_logit.as_slice());
        features.extend_from_slice(&g.feature);
    }
    storage::write_tensor(dir.join("positions.estf"), &Tensor::f64(vec![n, 3], positions))?;
    storage::write_tensor(
        dir.join("log_scales.estf"),
        &Tensor::f64(vec![n, 3], log_scales),
    )?;
    storage::write_tensor(dir.join("rotations.estf"), &Tensor::f64(vec![n, 4], rotations))?;
    storage::write_tensor(dir.join("opacity_logits.estf"), &Tensor::f64(vec![n], opacity))?;
    storage::write_tensor(dir.join("colors.estf"), &Tensor::f64(vec![n, 3], colors))?;
    storage::write_tensor(dir.join("features.estf"), &Tensor::f64(vec![n, dim], features))?;
    storage::write_text(
        dir.join("manifest.txt"),
        &format!("n={}\nd={}\niteration={}\n", n, dim, ckpt.iteration),
    )
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<Checkpoint> {
    let dir = dir.as_ref();
    let manifest_path = dir.join("manifest.txt");
    if !manifest_path.is_file() {
        return Err(Error::MissingCheckpoint(dir.display().to_string()));
    }
    let manifest = storage::read_text(&manifest_path)?;
    let mut n = 0usize;
    let mut dim = 0usize;
    let mut iteration = 0usize;
    for line in manifest.lines() {
        if let Some((key, value)) = line.split_once('=') {
            let value: usize = value
                .trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad manifest line: {line}")))?;
            match key.trim() {
                "n" => n = value,
                "d" => dim = value,
                "iteration" => iteration = value,
                _ => {}
            }
        }
    }

    let load = |name: &str, expect: usize| -> Result<Vec<f64>> {
        let t = storage::read_tensor(dir.join(format!("{name}.estf")))?;
        let v = t.as_f64();
        if v.len() != expect {
            return Err(Error::ShapeMismatch(format!(
                "{name}: expected {expect} values, got {}",
                v.len()
            )));
        }
        Ok(v)
    };
    let positions = load(GROUPS[0], n * 3)?;
    let log_scales = load(GROUPS[1], n * 3)?;
    let rotations = load(GROUPS[2], n * 4)?;
    let opacity = load(GROUPS[3], n)?;
    let colors = load(GROUPS[4], n * 3)?;
    let features = load(GROUPS[5], n * dim)?;

    let mut gaussians = Vec::with_capacity(n);
    for i in 0..n {
        gaussians.push(Gaussian {
            position: Vector3::new(positions[i * 3], positions[i * 3 + 1], positions[i * 3 + 2]),
            log_scale: Vector3::new(
                log_scales[i * 3],
                log_scales[i * 3 + 1],
                log_scales[i * 3 + 2],
            ),
            rotation: [
                rotations[i * 4],
                rotations[i * 4 + 1],
                rotations[i * 4 + 2],
                rotations[i * 4 + 3],
            ],
            opacity_logit: opacity[i],
            color_logit: Vector3::new(colors[i * 3], colors[i * 3 + 1], colors[i * 3 + 2]),
            feature: features[i * dim..(i + 1) * dim].to_vec(),
        });
    }
    Ok(Checkpoint {
        gaussians,
        iteration,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::random_scene;

    #[test]
    fn checkpoint_round_trip_bitwise() {
        let (gaussians, _, _) = random_scene(5, 7, 16, 16, 4);
        let dir = tempfile::tempdir().unwrap();
        let ckpt = Checkpoint {
            gaussians,
            iteration: 123,
        };
        save_checkpoint(dir.path(), &ckpt).unwrap();
        let back = load_checkpoint(dir.path()).unwrap();
        assert_eq!(back.iteration, 123);
        assert_eq!(back.gaussians, ckpt.gaussians);
    }

    #[test]
    fn missing_checkpoint_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_checkpoint(dir.path().join("nope")).unwrap_err();
        assert!(err.to_string().contains("missing checkpoint"), "{err}");
    }
}
