//! Procedural clean scenes with paired depth maps.
//!
//! A scene is a value-noise textured background at the far plane with shaded
//! rectangles, discs and gradient ramps composited far-to-near in front of it.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};
use crate::io::{load_depth, load_rgb};
use crate::image::{DepthMap, RgbImage};
use crate::rng::{derive_seed, seeded, Rng};

pub const MIN_RESOLUTION: usize = 16;

/// Inclusive range every output channel is stretched to.
pub const CHANNEL_RANGE: (f32, f32) = (0.05, 0.95);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub resolution: usize,
    pub primitives: usize,
    pub octaves: usize,
    /// Depth range (meters) primitives are placed in; the background sits at `far`.
    pub near: f32,
    pub far: f32,
}

impl SceneSpec {
    pub fn new(seed: u64, resolution: usize) -> Self {
        Self {
            seed,
            resolution,
            primitives: 6,
            octaves: 3,
            near: 1.0,
            far: 8.0,
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum Shape {
    Rect,
    Disc,
    Ramp,
}

#[derive(Clone, Debug)]
struct Primitive {
    shape: Shape,
    x0: f32,
    y0: f32,
    x1: f32,
    y1: f32,
    albedo: [f32; 3],
    second: [f32; 3],
    depth: f32,
}

impl Primitive {
    /// Shaded color at `(x, y)` if the point is covered.
    fn shade(&self, x: f32, y: f32) -> Option<[f32; 3]> {
        if x < self.x0 || x >= self.x1 || y < self.y0 || y >= self.y1 {
            return None;
        }
        let (w, h) = (self.x1 - self.x0, self.y1 - self.y0);
        match self.shape {
            Shape::Rect => {
                // soft top-left lighting
                let t = 1.0 - 0.25 * ((x - self.x0) / w + (y - self.y0) / h) * 0.5;
                Some(self.albedo.map(|a| a * t))
            }
            Shape::Disc => {
                let (cx, cy) = (self.x0 + w / 2.0, self.y0 + h / 2.0);
                let r2 = ((x - cx) / (w / 2.0)).powi(2) + ((y - cy) / (h / 2.0)).powi(2);
                if r2 > 1.0 {
                    return None;
                }
                let t = 1.0 - 0.5 * r2;
                Some(self.albedo.map(|a| a * t))
            }
            Shape::Ramp => {
                let t = (x - self.x0) / w;
                let mut c = [0.0; 3];
                for i in 0..3 {
                    c[i] = self.albedo[i] * (1.0 - t) + self.second[i] * t;
                }
                Some(c)
            }
        }
    }
}

fn smoothstep(t: f32) -> f32 {
    t * t * (3.0 - 2.0 * t)
}

/// Sum of `octaves` bilinear value-noise layers, normalized to `[0, 1]`.
fn value_noise(rng: &mut Rng, res: usize, octaves: usize) -> Vec<f32> {
    let mut field = vec![0.0f32; res * res];
    let mut total = 0.0;
    for o in 0..octaves.max(1) {
        let cells = 2usize << o;
        let amp = 0.5f32.powi(o as i32);
        total += amp;
        let lattice: Vec<f32> = (0..(cells + 1) * (cells + 1)).map(|_| rng.gen()).collect();
        for y in 0..res {
            let fy = y as f32 / res as f32 * cells as f32;
            let (iy, ty) = (fy as usize, smoothstep(fy.fract()));
            for x in 0..res {
                let fx = x as f32 / res as f32 * cells as f32;
                let (ix, tx) = (fx as usize, smoothstep(fx.fract()));
                let at = |i: usize, j: usize| lattice[j * (cells + 1) + i];
                let top = at(ix, iy) * (1.0 - tx) + at(ix + 1, iy) * tx;
                let bottom = at(ix, iy + 1) * (1.0 - tx) + at(ix + 1, iy + 1) * tx;
                field[y * res + x] += amp * (top * (1.0 - ty) + bottom * ty);
            }
        }
    }
    field.iter_mut().for_each(|v| *v /= total);
    field
}

fn random_color(rng: &mut Rng) -> [f32; 3] {
    [rng.gen(), rng.gen(), rng.gen()]
}

pub fn generate_scene(spec: &SceneSpec) -> Result<(RgbImage, DepthMap)> {
    let res = spec.resolution;
    if res < MIN_RESOLUTION {
        return Err(Error::InvalidArgument(format!(
            "scene resolution {res} below minimum {MIN_RESOLUTION}"
        )));
    }
    if !(spec.near >= 0.0 && spec.far > spec.near && spec.far.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "depth range [{}, {}] must satisfy 0 <= near < far",
            spec.near, spec.far
        )));
    }
    let mut rng = seeded(spec.seed);

    let base: [f32; 3] = [
        rng.gen_range(0.25..0.75),
        rng.gen_range(0.25..0.75),
        rng.gen_range(0.25..0.75),
    ];
    let noise: Vec<Vec<f32>> = (0..3).map(|_| value_noise(&mut rng, res, spec.octaves)).collect();

    let r = res as f32;
    let mut prims: Vec<Primitive> = (0..spec.primitives)
        .map(|_| {
            let shape = [Shape::Rect, Shape::Disc, Shape::Ramp][rng.gen_range(0..3)];
            let w = rng.gen_range(r / 6.0..r / 2.0);
            let h = rng.gen_range(r / 6.0..r / 2.0);
            let x0 = rng.gen_range(0.0..r - w);
            let y0 = rng.gen_range(0.0..r - h);
            Primitive {
                shape,
                x0,
                y0,
                x1: x0 + w,
                y1: y0 + h,
                albedo: random_color(&mut rng),
                second: random_color(&mut rng),
                depth: rng.gen_range(spec.near..spec.near + 0.9 * (spec.far - spec.near)),
            }
        })
        .collect();
    // painter's order: far first
    prims.sort_by(|a, b| b.depth.total_cmp(&a.depth));

    let mut rgb = vec![[0.0f32; 3]; res * res];
    let mut depth = vec![spec.far; res * res];
    for y in 0..res {
        for x in 0..res {
            let i = y * res + x;
            for c in 0..3 {
                rgb[i][c] = base[c] + 0.8 * (noise[c][i] - 0.5);
            }
            let (px, py) = (x as f32 + 0.5, y as f32 + 0.5);
            for p in &prims {
                if let Some(col) = p.shade(px, py) {
                    rgb[i] = col;
                    depth[i] = p.depth;
                }
            }
        }
    }

    // Stretch each channel so the image always spans CHANNEL_RANGE.
    let (lo_t, hi_t) = CHANNEL_RANGE;
    for c in 0..3 {
        let lo = rgb.iter().map(|p| p[c]).fold(f32::INFINITY, f32::min);
        let hi = rgb.iter().map(|p| p[c]).fold(f32::NEG_INFINITY, f32::max);
        let span = hi - lo;
        for p in rgb.iter_mut() {
            p[c] = if span > 1e-6 {
                lo_t + (p[c] - lo) / span * (hi_t - lo_t)
            } else {
                0.5 * (lo_t + hi_t)
            };
        }
    }

    let image = RgbImage::from_fn(res, res, |x, y| rgb[y * res + x]);
    let depth = DepthMap::new(res, res, depth)?;
    Ok((image, depth))
}

/// One clean scene, possibly mirrored.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSample {
    pub id: String,
    pub scene_seed: u64,
    pub flipped: bool,
    pub image: RgbImage,
    pub depth: DepthMap,
}

impl SceneSample {
    pub fn flipped(&self) -> Self {
        Self {
            id: format!("{}_flip", self.id),
            scene_seed: self.scene_seed,
            flipped: !self.flipped,
            image: self.image.flip_horizontal(),
            depth: self.depth.flip_horizontal(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SceneDataset {
    pub train: Vec<SceneSample>,
    pub val: Vec<SceneSample>,
}

/// Number of training items for an `n`-item split; both sides keep at least one item.
pub fn train_count(n: usize, split: f64) -> usize {
    ((n as f64 * split).round() as usize).clamp(1, n - 1)
}

/// Shuffles `0..n` with `rng` and splits it into (train, val) index lists.
pub fn split_indices(n: usize, split: f64, rng: &mut Rng) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 items to split, got {n}"
        )));
    }
    if !(split > 0.0 && split < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "split ratio {split} must lie strictly between 0 and 1"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let cut = train_count(n, split);
    let val = idx.split_off(cut);
    Ok((idx, val))
}

/// Seed of scene `index` in a dataset generated from `seed`.
pub fn scene_seed(seed: u64, index: usize) -> u64 {
    derive_seed(seed, &format!("scene/{index}"))
}

pub fn scene_id(index: usize) -> String {
    format!("scene_{index:04}")
}

/// Generates `n` scenes, shuffles deterministically and splits train/val.
/// With `flip`, every training scene is followed by its mirror image.
pub fn build_dataset(n: usize, split: f64, seed: u64, template: &SceneSpec, flip: bool) -> Result<SceneDataset> {
    let mut rng = seeded(derive_seed(seed, "split"));
    let (train_idx, val_idx) = split_indices(n, split, &mut rng)?;
    let make = |i: usize| -> Result<SceneSample> {
        let spec = SceneSpec {
            seed: scene_seed(seed, i),
            ..template.clone()
        };
        let (image, depth) = generate_scene(&spec)?;
        Ok(SceneSample {
            id: scene_id(i),
            scene_seed: spec.seed,
            flipped: false,
            image,
            depth,
        })
    };
    let generated: Vec<SceneSample> = train_idx.into_par_iter().map(make).collect::<Result<_>>()?;
    let mut train = Vec::with_capacity(generated.len() * 2);
    for s in generated {
        if flip {
            let f = s.flipped();
            train.push(s);
            train.push(f);
        } else {
            train.push(s);
        }
    }
    let val = val_idx.into_par_iter().map(make).collect::<Result<_>>()?;
    Ok(SceneDataset { train, val })
}

/// Loads user-supplied scenes: every `<stem>.ppm` in `dir` paired with
/// `<stem>.pfm`, in file-name order.
pub fn load_scene_dir(dir: &Path) -> Result<Vec<SceneSample>> {
    let mut stems: Vec<String> = std::fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "ppm"))
        .filter_map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .collect();
    stems.sort();
    if stems.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{}: no .ppm images found",
            dir.display()
        )));
    }
    stems
        .into_iter()
        .map(|stem| {
            let image = load_rgb(dir.join(format!("{stem}.ppm")))?;
            let depth_path = dir.join(format!("{stem}.pfm"));
            if !depth_path.exists() {
                return Err(Error::InvalidArgument(format!(
                    "{}: missing depth map for {stem}",
                    depth_path.display()
                )));
            }
            let depth = load_depth(depth_path)?;
            crate::image::check_same_dims(&image, &depth)?;
            Ok(SceneSample {
                id: stem,
                scene_seed: 0,
                flipped: false,
                image,
                depth,
            })
        })
        .collect()
}
