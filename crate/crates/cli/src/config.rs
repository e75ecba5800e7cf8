//! Run configuration: one TOML file, five sections, strict keys.

use std::path::{Path, PathBuf};

use anyhow::Result;
use discgan_core::discgan::TrainConfig;
use discgan_core::pipeline::FeatureSettings;
use discgan_core::scene::SceneSpec;
use serde::{Deserialize, Serialize};

use crate::failure::Failure;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default)]
    pub dataset: DatasetSection,
    #[serde(default)]
    pub water: WaterSection,
    #[serde(default)]
    pub clustering: ClusteringSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    pub scenes: usize,
    pub resolution: usize,
    /// Fraction of scenes used for training.
    pub split: f64,
    /// Add horizontally flipped copies of training pairs.
    pub flip: bool,
    pub primitives: usize,
    pub octaves: usize,
    pub near: f32,
    pub far: f32,
}

impl Default for DatasetSection {
    fn default() -> Self {
        let spec = SceneSpec::new(0, 64);
        Self {
            scenes: 32,
            resolution: spec.resolution,
            split: 0.8,
            flip: true,
            primitives: spec.primitives,
            octaves: spec.octaves,
            near: spec.near,
            far: spec.far,
        }
    }
}

impl DatasetSection {
    pub fn template(&self) -> SceneSpec {
        SceneSpec {
            seed: 0,
            resolution: self.resolution,
            primitives: self.primitives,
            octaves: self.octaves,
            near: self.near,
            far: self.far,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WaterSection {
    /// Water-type CSV; the built-in four types when absent. Relative paths
    /// are resolved against the config file's directory.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub table: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusteringSection {
    pub k: usize,
    pub bins: usize,
    /// Depth normalizer for the mean-depth feature; `dataset.far` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_depth: Option<f64>,
    pub depth_weight: f64,
    pub restarts: usize,
    pub max_iter: usize,
    pub k_min: usize,
    pub k_max: usize,
}

impl Default for ClusteringSection {
    fn default() -> Self {
        Self {
            k: 4,
            bins: discgan_core::clustering::DEFAULT_BINS,
            max_depth: None,
            depth_weight: 1.0,
            restarts: 16,
            max_iter: 100,
            k_min: 1,
            k_max: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lambda_rec: f64,
    pub lambda_adv: f64,
    pub base_channels: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            lr: d.lr,
            beta1: d.beta1,
            beta2: d.beta2,
            epochs: d.epochs,
            batch_size: d.batch_size,
            lambda_rec: d.lambda_rec,
            lambda_adv: d.lambda_adv,
            base_channels: d.base_channels,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderKind {
    /// Pooled activations of the seeded style bank.
    Bank,
    /// Box-downsampled pixels.
    Pixels,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub embedder: EmbedderKind,
    pub pixel_side: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            embedder: EmbedderKind::Bank,
            pixel_side: 8,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> std::result::Result<Self, Failure> {
        toml::from_str(text).map_err(|e| Failure::config(e.to_string().trim_end().to_string()))
    }

    /// Reads, applies the seed override, resolves relative paths and fills
    /// derived defaults.
    pub fn load(path: &Path, seed: Option<u64>) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text).map_err(|f| f.context(path))?;
        if let Some(s) = seed {
            cfg.seed = s;
        }
        if let Some(t) = &cfg.water.table {
            if t.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                cfg.water.table = Some(base.join(t));
            }
        }
        cfg.clustering.max_depth.get_or_insert(cfg.dataset.far as f64);
        cfg.validate().map_err(|f| f.context(path))?;
        Ok(cfg)
    }

    fn validate(&self) -> std::result::Result<(), Failure> {
        let d = &self.dataset;
        let c = &self.clustering;
        let checks = [
            (d.scenes >= 2, "dataset.scenes must be at least 2"),
            (d.split > 0.0 && d.split < 1.0, "dataset.split must lie in (0, 1)"),
            (d.near > 0.0 && d.near <= d.far, "dataset.near must be positive and at most dataset.far"),
            (c.k >= 1, "clustering.k must be at least 1"),
            (c.bins >= 1, "clustering.bins must be at least 1"),
            (c.max_depth.map_or(true, |m| m > 0.0), "clustering.max_depth must be positive"),
            (c.depth_weight >= 0.0, "clustering.depth_weight must be non-negative"),
            (c.restarts >= 1 && c.max_iter >= 1, "clustering.restarts and max_iter must be at least 1"),
            (c.k_min >= 1 && c.k_min + 2 <= c.k_max, "clustering needs 1 <= k_min and k_min + 2 <= k_max"),
            (self.eval.pixel_side >= 1, "eval.pixel_side must be at least 1"),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(Failure::config(msg.to_string()));
            }
        }
        self.train_config(0).validate().map_err(|e| Failure::config(e.to_string()))
    }

    pub fn features(&self) -> FeatureSettings {
        FeatureSettings {
            bins: self.clustering.bins,
            max_depth: self.clustering.max_depth.unwrap_or(self.dataset.far as f64),
            depth_weight: self.clustering.depth_weight,
        }
    }

    pub fn train_config(&self, cluster: usize) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            lr: t.lr,
            beta1: t.beta1,
            beta2: t.beta2,
            epochs: t.epochs,
            batch_size: t.batch_size,
            lambda_rec: t.lambda_rec,
            lambda_adv: t.lambda_adv,
            base_channels: t.base_channels,
            seed: self.seed,
            cluster,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Keys each subcommand reads, shown in its `--help`.
pub fn keys_help(command: &str) -> String {
    let dataset = "dataset.scenes, dataset.resolution, dataset.split, dataset.primitives, dataset.octaves, dataset.near, dataset.far";
    let features = "clustering.bins, clustering.max_depth, clustering.depth_weight";
    let search = "clustering.restarts, clustering.max_iter";
    let train = "train.lr, train.beta1, train.beta2, train.epochs, train.batch_size, train.lambda_rec, train.lambda_adv, train.base_channels";
    let keys = match command {
        "render" => format!("seed, {dataset}, water.table"),
        "cluster" => format!("seed, clustering.k, {features}, {search}"),
        "elbow" => format!("seed, clustering.k_min, clustering.k_max, {features}, {search}"),
        "train" => format!("seed, dataset.flip, {train}"),
        "synthesize" => "seed, dataset.flip".to_string(),
        "evaluate" => "seed, train.base_channels, eval.embedder, eval.pixel_side".to_string(),
        _ => String::new(),
    };
    format!("Config keys read: {keys}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_only_config_takes_defaults() {
        let cfg = RunConfig::parse("seed = 3\n").unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.dataset, DatasetSection::default());
        assert_eq!(cfg.train_config(2).cluster, 2);
        assert_eq!(cfg.train_config(0).lr, 2e-4);
    }

    #[test]
    fn strict_parsing() {
        assert!(RunConfig::parse("").is_err());
        assert!(RunConfig::parse("seed = 1\nfoo = 2\n").is_err());
        assert!(RunConfig::parse("seed = 1\n[train]\nepoch = 2\n").is_err());
        assert!(RunConfig::parse("seed = 1\n[eval]\nembedder = \"inception\"\n").is_err());
    }

    #[test]
    fn echo_round_trips() {
        let mut cfg = RunConfig::parse("seed = 9\n[clustering]\nk = 3\n[eval]\nembedder = \"pixels\"\n").unwrap();
        cfg.clustering.max_depth = Some(8.0);
        assert_eq!(RunConfig::parse(&cfg.to_toml()).unwrap(), cfg);
    }
}
