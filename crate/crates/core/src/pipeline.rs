//! Glue between stages: rendering a scene set under every water type,
//! clustering the renders, and assembling per-cluster training pairs.

use rayon::prelude::*;

use crate::clustering::{extract_style_features, ClusterModel};
use crate::discgan::TrainingPair;
use crate::error::{Error, Result};
use crate::image::{DepthMap, RgbImage};
use crate::physics::{render_underwater, WaterType};
use crate::scene::SceneSample;

/// One scene rendered under one water type.
#[derive(Clone, Debug, PartialEq)]
pub struct Rendered {
    pub name: String,
    pub scene: usize,
    pub water: usize,
    pub image: RgbImage,
}

/// Renders every scene under every water type, scene-major.
pub fn render_all(scenes: &[SceneSample], waters: &[WaterType]) -> Result<Vec<Rendered>> {
    let jobs: Vec<(usize, usize)> = (0..scenes.len())
        .flat_map(|s| (0..waters.len()).map(move |w| (s, w)))
        .collect();
    jobs.par_iter()
        .map(|&(s, w)| {
            Ok(Rendered {
                name: format!("{}_{}", scenes[s].id, waters[w].name),
                scene: s,
                water: w,
                image: render_underwater(&scenes[s].image, &scenes[s].depth, &waters[w])?,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeatureSettings {
    pub bins: usize,
    pub max_depth: f64,
    pub depth_weight: f64,
}

pub fn feature_vector(img: &RgbImage, depth: &DepthMap, s: &FeatureSettings) -> Result<Vec<f64>> {
    Ok(extract_style_features(img, depth, s.bins, s.max_depth)?.to_vector(s.depth_weight))
}

/// Clustering vectors of rendered images, using each scene's depth map.
pub fn rendered_features(items: &[Rendered], scenes: &[SceneSample], s: &FeatureSettings) -> Result<Vec<Vec<f64>>> {
    items
        .par_iter()
        .map(|r| feature_vector(&r.image, &scenes[r.scene].depth, s))
        .collect()
}

/// Training and validation pairs of one cluster. A member goes to
/// validation when its scene is flagged in `is_val`.
pub fn cluster_pairs(
    model: &ClusterModel,
    cluster: usize,
    items: &[Rendered],
    scenes: &[SceneSample],
    is_val: &[bool],
) -> Result<(Vec<TrainingPair>, Vec<TrainingPair>, Vec<usize>)> {
    if cluster >= model.k {
        return Err(Error::InvalidArgument(format!(
            "cluster {cluster} out of range for k = {}",
            model.k
        )));
    }
    if model.labels.len() != items.len() {
        return Err(Error::Dimension(format!(
            "cluster model has {} labels for {} rendered items",
            model.labels.len(),
            items.len()
        )));
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut val_scenes = Vec::new();
    for i in model.members(cluster) {
        let r = &items[i];
        let pair = TrainingPair {
            id: r.name.clone(),
            content: scenes[r.scene].image.clone(),
            target: r.image.clone(),
        };
        if is_val[r.scene] {
            val.push(pair);
            val_scenes.push(r.scene);
        } else {
            train.push(pair);
        }
    }
    Ok((train, val, val_scenes))
}
