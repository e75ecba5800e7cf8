//! Checkpoint directories: `manifest.json` plus `weights.bin`, a concatenation
//! of little-endian f32 tensors in manifest order.

use std::path::Path;

use discgan_tensor::{numel, Shape, Tensor};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::network::{Architecture, StyleBank};
use super::params::ParamSet;
use super::train::{GanModel, TrainConfig};
use crate::error::{io_err, Error, Result};
use crate::image::RgbImage;
use crate::io::write_bytes;
use crate::rng::substream;

pub const MANIFEST: &str = "manifest.json";
pub const WEIGHTS: &str = "weights.bin";
const FORMAT: &str = "discgan-checkpoint/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Shape,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub cluster: usize,
    pub epoch: usize,
    pub seed: u64,
    pub architecture: Architecture,
    pub config: TrainConfig,
    pub tensors: Vec<TensorEntry>,
}

fn groups(model: &GanModel) -> [&ParamSet; 3] {
    [&model.generator, &model.discriminator, model.bank.params()]
}

/// Refuses a directory that already holds another cluster's checkpoint.
pub fn claim_checkpoint_dir(dir: &Path, cluster: usize) -> Result<()> {
    let path = dir.join(MANIFEST);
    if !path.exists() {
        return Ok(());
    }
    let manifest = read_manifest(dir)?;
    if manifest.cluster != cluster {
        return Err(Error::InvalidArgument(format!(
            "{} belongs to cluster {}, not cluster {cluster}",
            dir.display(),
            manifest.cluster
        )));
    }
    Ok(())
}

/// Writes both files via temporary names and renames, so a crash never
/// leaves a half-written checkpoint behind.
pub fn save_checkpoint(dir: &Path, model: &GanModel, config: &TrainConfig, epoch: usize) -> Result<()> {
    let mut tensors = Vec::new();
    let mut blob = Vec::new();
    for set in groups(model) {
        for (name, t) in set.iter() {
            tensors.push(TensorEntry {
                name: name.to_string(),
                shape: t.shape(),
            });
            blob.extend(t.data().iter().flat_map(|v| v.to_le_bytes()));
        }
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        cluster: config.cluster,
        epoch,
        seed: config.seed,
        architecture: model.arch,
        config: config.clone(),
        tensors,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    let tmp_w = dir.join(format!("{WEIGHTS}.tmp"));
    let tmp_m = dir.join(format!("{MANIFEST}.tmp"));
    write_bytes(&tmp_w, &blob)?;
    write_bytes(&tmp_m, text.as_bytes())?;
    let final_w = dir.join(WEIGHTS);
    std::fs::rename(&tmp_w, &final_w).map_err(io_err(&final_w))?;
    let final_m = dir.join(MANIFEST);
    std::fs::rename(&tmp_m, &final_m).map_err(io_err(&final_m))?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    if !path.exists() {
        return Err(Error::MissingCheckpoint(dir.to_path_buf()));
    }
    let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.format != FORMAT {
        return Err(Error::InvalidArgument(format!(
            "{}: unsupported checkpoint format {:?}",
            path.display(),
            manifest.format
        )));
    }
    Ok(manifest)
}

/// Loads the checkpoint in `dir`, which must belong to `cluster`.
pub fn load_checkpoint(dir: &Path, cluster: usize) -> Result<(GanModel, Manifest)> {
    let manifest = read_manifest(dir)?;
    if manifest.cluster != cluster {
        return Err(Error::InvalidArgument(format!(
            "{} holds cluster {}, requested cluster {cluster}",
            dir.display(),
            manifest.cluster
        )));
    }
    let path = dir.join(WEIGHTS);
    let bytes = std::fs::read(&path).map_err(io_err(&path))?;
    let expected: usize = manifest.tensors.iter().map(|t| numel(&t.shape) * 4).sum();
    if bytes.len() != expected {
        return Err(Error::Format {
            path: path.display().to_string(),
            offset: bytes.len().min(expected),
            reason: format!("weights hold {} bytes, manifest describes {expected}", bytes.len()),
        });
    }
    let mut sets = [ParamSet::new(), ParamSet::new(), ParamSet::new()];
    let mut offset = 0;
    for entry in &manifest.tensors {
        let len = numel(&entry.shape) * 4;
        let data = bytes[offset..offset + len]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        offset += len;
        let group = match entry.name.split('.').next() {
            Some("disc") => 1,
            Some("bank") => 2,
            _ => 0,
        };
        sets[group].push(entry.name.clone(), Tensor::new(entry.shape, data)?);
    }
    let [generator, discriminator, bank] = sets;
    let model = GanModel {
        arch: manifest.architecture,
        generator,
        discriminator,
        bank: StyleBank::from_params(bank)?,
    };
    Ok((model, manifest))
}

/// Uniform, seeded choice of a style reference from the cluster's pool.
pub fn pick_style(pool_len: usize, cluster: usize, seed: u64) -> Result<usize> {
    if pool_len == 0 {
        return Err(Error::InvalidArgument(format!("style pool of cluster {cluster} is empty")));
    }
    Ok(substream(seed, &format!("style-pick/{cluster}")).gen_range(0..pool_len))
}

/// Generates `content` in the style of a seeded pick from `pool`.
pub fn synthesize_with(model: &GanModel, content: &RgbImage, pool: &[RgbImage], cluster: usize, seed: u64) -> Result<RgbImage> {
    let idx = pick_style(pool.len(), cluster, seed)?;
    let style = model.style_code(&pool[idx])?;
    model.translate(content, &style)
}

/// Loads the cluster's checkpoint from `dir` and synthesizes one image.
pub fn synthesize(content: &RgbImage, cluster: usize, pool: &[RgbImage], dir: &Path, seed: u64) -> Result<RgbImage> {
    let (model, _) = load_checkpoint(dir, cluster)?;
    synthesize_with(&model, content, pool, cluster, seed)
}
