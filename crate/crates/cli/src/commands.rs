use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use discgan_core::clustering::{
    elbow_scan, kmeans_fit, read_features_csv, suggest_k, write_centroids_csv, write_elbow_csv,
    write_features_csv, ClusterModel,
};
use discgan_core::discgan::{
    load_checkpoint, shared_bank, synthesize_with, train_cluster, with_flips, write_log, Architecture,
    MANIFEST,
};
use discgan_core::io::{load_rgb, save_depth, save_rgb, write_bytes};
use discgan_core::metrics::{embed_images, evaluate_cluster, fid, write_pair_report, write_report, Embedder};
use discgan_core::physics::{default_water_types, load_water_types, save_water_types};
use discgan_core::pipeline::{cluster_pairs, render_all, rendered_features};
use discgan_core::rng::substream;
use discgan_core::scene::{build_dataset, load_scene_dir, split_indices};
use discgan_core::{Error, RgbImage};

use crate::config::{EmbedderKind, RunConfig};
use crate::failure::Failure;
use crate::layout::{list_ppm, load_render_set, reset_dir, stem, write_index, Index, ItemEntry, Layout, SceneEntry};

pub fn echo_config(layout: &Layout, command: &str, cfg: &RunConfig) -> Result<()> {
    write_bytes(&layout.config_echo(command), cfg.to_toml().as_bytes())?;
    Ok(())
}

/// Generates or loads clean scenes and renders each under every water type.
pub fn render(cfg: &RunConfig, layout: &Layout, input: Option<&Path>) -> Result<()> {
    let d = &cfg.dataset;
    let (mut scenes, is_val) = match input {
        None => {
            let set = build_dataset(d.scenes, d.split, cfg.seed, &d.template(), false)?;
            let n_train = set.train.len();
            let mut all: Vec<_> = set.train.into_iter().chain(set.val).enumerate().collect();
            all.sort_by(|a, b| a.1.id.cmp(&b.1.id));
            let is_val = all.iter().map(|(i, _)| *i >= n_train).collect::<Vec<_>>();
            (all.into_iter().map(|(_, s)| s).collect::<Vec<_>>(), is_val)
        }
        Some(dir) => {
            if !dir.is_dir() {
                return Err(Failure::missing_input(dir).into());
            }
            if list_ppm(dir)?.is_empty() {
                return Err(Failure::empty_input(dir, ".ppm scenes").into());
            }
            let scenes = load_scene_dir(dir)?;
            let (_, val) = split_indices(scenes.len(), d.split, &mut substream(cfg.seed, "split"))?;
            let mut is_val = vec![false; scenes.len()];
            for i in val {
                is_val[i] = true;
            }
            (scenes, is_val)
        }
    };
    for s in &mut scenes {
        s.flipped = false;
    }
    let waters = match &cfg.water.table {
        Some(path) => load_water_types(path)?,
        None => default_water_types(),
    };
    let rendered = render_all(&scenes, &waters)?;

    let data = layout.data();
    reset_dir(&data)?;
    for s in &scenes {
        save_rgb(data.join("scenes").join(format!("{}.ppm", s.id)), &s.image)?;
        save_depth(data.join("scenes").join(format!("{}.pfm", s.id)), &s.depth)?;
    }
    for r in &rendered {
        save_rgb(data.join("rendered").join(format!("{}.ppm", r.name)), &r.image)?;
    }
    save_water_types(data.join("water.csv"), &waters)?;
    let index = Index {
        scenes: scenes
            .iter()
            .zip(&is_val)
            .map(|(s, &val)| SceneEntry { id: s.id.clone(), val })
            .collect(),
        items: rendered
            .iter()
            .map(|r| ItemEntry {
                name: r.name.clone(),
                scene: scenes[r.scene].id.clone(),
                water: waters[r.water].name.clone(),
            })
            .collect(),
    };
    write_index(&data, &index)?;
    println!(
        "rendered {} scenes ({} validation) under {} water types: {} images",
        scenes.len(),
        is_val.iter().filter(|&&v| v).count(),
        waters.len(),
        rendered.len()
    );
    Ok(())
}

/// Feature vectors with item names, from a render set directory or a
/// features CSV.
fn load_features(cfg: &RunConfig, input: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    if input.is_file() {
        return Ok(read_features_csv(input)?);
    }
    if !input.exists() {
        return Err(Failure::missing_input(input).into());
    }
    let set = load_render_set(input)?;
    let points = rendered_features(&set.items, &set.scenes, &cfg.features())?;
    Ok((set.items.into_iter().map(|r| r.name).collect(), points))
}

pub fn cluster(cfg: &RunConfig, layout: &Layout, input: &Path) -> Result<()> {
    let c = &cfg.clustering;
    let (names, points) = load_features(cfg, input)?;
    let model = kmeans_fit(&points, c.k, cfg.seed, c.max_iter, c.restarts)?;
    let dir = layout.clusters();
    reset_dir(&dir)?;
    model.save_json(&layout.cluster_model())?;
    write_features_csv(&dir.join("features.csv"), &names, &points, Some(&model.labels))?;
    write_centroids_csv(&dir.join("centroids.csv"), &model)?;
    let sizes: Vec<String> = (0..model.k).map(|j| model.members(j).len().to_string()).collect();
    println!(
        "k = {}, inertia = {:.6}, cluster sizes [{}]",
        model.k,
        model.inertia,
        sizes.join(", ")
    );
    Ok(())
}

pub fn elbow(cfg: &RunConfig, layout: &Layout, input: &Path) -> Result<()> {
    let c = &cfg.clustering;
    let (_, points) = load_features(cfg, input)?;
    let k_max = c.k_max.min(points.len());
    if k_max < c.k_min + 2 {
        return Err(Failure::invalid(format!(
            "{} points cannot support an elbow scan from k = {}",
            points.len(),
            c.k_min
        ))
        .into());
    }
    let ks: Vec<usize> = (c.k_min..=k_max).collect();
    let curve = elbow_scan(&points, &ks, cfg.seed, c.max_iter, c.restarts)?;
    write_elbow_csv(&layout.reports().join("elbow.csv"), &curve)?;
    let choice = suggest_k(&curve)?;
    println!("suggested k = {} (degenerate: {})", choice.k, choice.degenerate);
    Ok(())
}

fn load_clusters(layout: &Layout) -> Result<ClusterModel> {
    let path = layout.cluster_model();
    if !path.exists() {
        return Err(Failure::missing_input(&path).into());
    }
    Ok(ClusterModel::load_json(&path)?)
}

fn check_cluster(model: &ClusterModel, cluster: usize) -> Result<()> {
    if cluster >= model.k {
        return Err(Failure::invalid(format!("cluster {cluster} out of range for k = {}", model.k)).into());
    }
    Ok(())
}

pub fn train(cfg: &RunConfig, layout: &Layout, cluster: usize) -> Result<()> {
    let model = load_clusters(layout)?;
    check_cluster(&model, cluster)?;
    let set = load_render_set(&layout.data())?;
    let (mut train, val, _) = cluster_pairs(&model, cluster, &set.items, &set.scenes, &set.is_val)?;
    if cfg.dataset.flip {
        train = with_flips(&train);
    }
    let tc = cfg.train_config(cluster);
    let outcome = train_cluster(&train, &val, &tc, Some(&layout.checkpoint(cluster)))?;
    write_log(&layout.reports().join(format!("train_{cluster}.csv")), &outcome.log)?;
    match outcome.log.last() {
        Some(last) => println!(
            "cluster {cluster}: {} training pairs, {} validation pairs, final loss_g_l1 = {:.6}",
            train.len(),
            val.len(),
            last.loss_g_l1
        ),
        None => println!("cluster {cluster}: saved initialization (0 epochs)"),
    }
    Ok(())
}

/// Synthesizes `content` (an image or a directory of images) in the
/// cluster's style, or the cluster's validation scenes when omitted.
pub fn synthesize(cfg: &RunConfig, layout: &Layout, cluster: usize, content: Option<&Path>) -> Result<()> {
    let ckpt = layout.checkpoint(cluster);
    if !ckpt.join(MANIFEST).exists() {
        return Err(Error::MissingCheckpoint(ckpt).into());
    }
    let (gan, _) = load_checkpoint(&ckpt, cluster)?;
    let model = load_clusters(layout)?;
    check_cluster(&model, cluster)?;
    let set = load_render_set(&layout.data())?;
    let (mut train, val, _) = cluster_pairs(&model, cluster, &set.items, &set.scenes, &set.is_val)?;
    if cfg.dataset.flip {
        train = with_flips(&train);
    }
    let pool: Vec<RgbImage> = train.into_iter().map(|p| p.target).collect();

    let jobs: Vec<(String, RgbImage)> = match content {
        None => val.into_iter().map(|p| (p.id, p.content)).collect(),
        Some(path) if path.is_dir() => list_ppm(path)?
            .iter()
            .map(|p| Ok((stem(p), load_rgb(p)?)))
            .collect::<Result<_>>()?,
        Some(path) if path.is_file() => vec![(stem(path), load_rgb(path)?)],
        Some(path) => return Err(Failure::missing_input(path).into()),
    };
    if jobs.is_empty() {
        let what = content.map_or_else(|| PathBuf::from(format!("cluster {cluster} validation set")), Path::to_path_buf);
        return Err(Failure::empty_input(&what, "content images").into());
    }
    let out = layout.synth().join(cluster.to_string());
    reset_dir(&out)?;
    for (name, img) in &jobs {
        let fake = synthesize_with(&gan, img, &pool, cluster, cfg.seed)
            .with_context(|| format!("synthesizing {name}"))?;
        save_rgb(out.join(format!("{name}.ppm")), &fake)?;
    }
    println!("cluster {cluster}: synthesized {} images into {}", jobs.len(), out.display());
    Ok(())
}

/// Groups of generated images: the directory itself when it holds images,
/// otherwise each subdirectory that does.
fn generated_groups(dir: &Path) -> Result<Vec<(String, Vec<PathBuf>)>> {
    if !dir.is_dir() {
        return Err(Failure::missing_input(dir).into());
    }
    let direct = list_ppm(dir)?;
    if !direct.is_empty() {
        return Ok(vec![(stem(dir), direct)]);
    }
    let mut subdirs: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| dir.display().to_string())?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    subdirs.sort();
    let mut groups = Vec::new();
    for sub in subdirs {
        let files = list_ppm(&sub)?;
        if !files.is_empty() {
            groups.push((stem(&sub), files));
        }
    }
    if groups.is_empty() {
        return Err(Failure::empty_input(dir, "generated .ppm images").into());
    }
    Ok(groups)
}

/// Scores generated images against same-named references.
pub fn evaluate(cfg: &RunConfig, layout: &Layout, generated: &Path, reference: &Path) -> Result<()> {
    let groups = generated_groups(generated)?;
    if !reference.is_dir() {
        return Err(Failure::missing_input(reference).into());
    }
    let bank = shared_bank(Architecture::new(cfg.train.base_channels)?, cfg.seed);
    let embedder = match cfg.eval.embedder {
        EmbedderKind::Bank => Embedder::Bank(&bank),
        EmbedderKind::Pixels => Embedder::Pixels { side: cfg.eval.pixel_side },
    };
    let mut reports = Vec::new();
    let mut all_gen = Vec::new();
    let mut all_ref = Vec::new();
    for (name, files) in &groups {
        let mut gen = Vec::new();
        let mut refs = Vec::new();
        for f in files {
            let r = reference.join(f.file_name().expect("listed file has a name"));
            if !r.is_file() {
                return Err(Failure::missing_input(&r).context(f)).context("no reference for generated image");
            }
            gen.push(load_rgb(f)?);
            refs.push(load_rgb(&r)?);
        }
        reports.push(evaluate_cluster(name, &gen, &refs, &embedder)?);
        all_gen.extend(gen);
        all_ref.extend(refs);
    }
    let overall = fid(&embed_images(&all_ref, &embedder)?, &embed_images(&all_gen, &embedder)?)?;
    let dir = layout.reports();
    write_report(&dir.join("eval.csv"), &reports, Some(overall))?;
    write_pair_report(&dir.join("eval_pairs.csv"), &reports)?;
    for r in &reports {
        println!("cluster {}: ssim {:.4}, psnr {}, fid {:.4}", r.cluster, r.ssim, r.psnr, r.fid);
    }
    println!("overall fid {overall:.4}");
    Ok(())
}
