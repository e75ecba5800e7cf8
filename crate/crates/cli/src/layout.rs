//! Output directory layout and the on-disk render set.
//!
//! ```text
//! <out>/configs/<command>.toml   effective config of the last run of each command
//! <out>/data/scenes/             clean scenes, <id>.ppm + <id>.pfm
//! <out>/data/rendered/           underwater renders, <scene>_<water>.ppm
//! <out>/data/index.json          scene split and render list
//! <out>/data/water.csv           water types used for rendering
//! <out>/clusters/                model.json, features.csv, centroids.csv
//! <out>/checkpoints/<cluster>/   manifest.json + weights.bin
//! <out>/synth/<cluster>/         synthesized images
//! <out>/reports/                 elbow, training logs, evaluation
//! ```

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use discgan_core::io::{load_rgb, write_bytes};
use discgan_core::pipeline::Rendered;
use discgan_core::scene::{load_scene_dir, SceneSample};
use serde::{Deserialize, Serialize};

use crate::failure::Failure;

pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Self {
        Self { root: root.to_path_buf() }
    }

    pub fn config_echo(&self, command: &str) -> PathBuf {
        self.root.join("configs").join(format!("{command}.toml"))
    }

    pub fn data(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn clusters(&self) -> PathBuf {
        self.root.join("clusters")
    }

    pub fn cluster_model(&self) -> PathBuf {
        self.clusters().join("model.json")
    }

    pub fn checkpoint(&self, cluster: usize) -> PathBuf {
        self.root.join("checkpoints").join(cluster.to_string())
    }

    pub fn synth(&self) -> PathBuf {
        self.root.join("synth")
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }
}

pub const INDEX: &str = "index.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneEntry {
    pub id: String,
    pub val: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemEntry {
    pub name: String,
    pub scene: String,
    pub water: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Index {
    pub scenes: Vec<SceneEntry>,
    pub items: Vec<ItemEntry>,
}

/// A render set loaded back from disk.
pub struct RenderSet {
    pub scenes: Vec<SceneSample>,
    pub is_val: Vec<bool>,
    pub items: Vec<Rendered>,
}

pub fn write_index(data: &Path, index: &Index) -> Result<()> {
    let mut text = serde_json::to_string_pretty(index)?;
    text.push('\n');
    write_bytes(&data.join(INDEX), text.as_bytes())?;
    Ok(())
}

pub fn load_render_set(data: &Path) -> Result<RenderSet> {
    let index_path = data.join(INDEX);
    if !index_path.exists() {
        return Err(Failure::missing_input(&index_path).into());
    }
    let index: Index = serde_json::from_str(
        &std::fs::read_to_string(&index_path).with_context(|| index_path.display().to_string())?,
    )
    .with_context(|| index_path.display().to_string())?;
    let loaded = load_scene_dir(&data.join("scenes"))?;
    let mut by_id: HashMap<String, SceneSample> = loaded.into_iter().map(|s| (s.id.clone(), s)).collect();
    let mut scenes = Vec::with_capacity(index.scenes.len());
    let mut slot = HashMap::new();
    for (i, entry) in index.scenes.iter().enumerate() {
        let s = by_id
            .remove(&entry.id)
            .ok_or_else(|| Failure::invalid(format!("{}: scene {} has no image", index_path.display(), entry.id)))?;
        slot.insert(entry.id.clone(), i);
        scenes.push(s);
    }
    let is_val = index.scenes.iter().map(|s| s.val).collect();
    let mut waters: Vec<&str> = Vec::new();
    let items = index
        .items
        .iter()
        .map(|item| {
            let scene = *slot
                .get(&item.scene)
                .ok_or_else(|| Failure::invalid(format!("{}: unknown scene {}", index_path.display(), item.scene)))?;
            let water = match waters.iter().position(|w| *w == item.water) {
                Some(w) => w,
                None => {
                    waters.push(&item.water);
                    waters.len() - 1
                }
            };
            Ok(Rendered {
                name: item.name.clone(),
                scene,
                water,
                image: load_rgb(data.join("rendered").join(format!("{}.ppm", item.name)))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if items.is_empty() {
        return Err(Failure::empty_input(data, "rendered images").into());
    }
    Ok(RenderSet { scenes, is_val, items })
}

/// `.ppm` files directly inside `dir`, sorted by name.
pub fn list_ppm(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| dir.display().to_string())?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "ppm"))
        .collect();
    out.sort();
    Ok(out)
}

pub fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Removes a previous run's output directory so stale files never linger.
pub fn reset_dir(dir: &Path) -> Result<()> {
    if dir.exists() {
        std::fs::remove_dir_all(dir).with_context(|| format!("clearing {}", dir.display()))?;
    }
    std::fs::create_dir_all(dir).with_context(|| dir.display().to_string())?;
    Ok(())
}
