//! Synthetic underwater data generation, style clustering, per-cluster GAN
//! training and evaluation.

pub mod clustering;
pub mod discgan;
pub mod error;
pub mod image;
pub mod io;
pub mod metrics;
pub mod physics;
pub mod pipeline;
pub mod rng;
pub mod scene;

pub use error::{Error, Result};
pub use image::{DepthMap, RgbImage};
pub use physics::{default_water_types, render_underwater, WaterType};
pub use scene::{build_dataset, generate_scene, SceneDataset, SceneSample, SceneSpec};
