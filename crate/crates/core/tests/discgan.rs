use std::collections::BTreeSet;

use discgan_core::discgan::*;
use discgan_core::rng::seeded;
use discgan_core::{Error, RgbImage};
use discgan_tensor::{instance_stats, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_image(seed: u64, w: usize, h: usize) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    RgbImage::from_fn(w, h, |_, _| [rng.gen(), rng.gen(), rng.gen()])
}

fn arch() -> Architecture {
    Architecture::new(2).unwrap()
}

fn small_config(cluster: usize) -> TrainConfig {
    TrainConfig {
        epochs: 2,
        base_channels: 2,
        seed: 11,
        cluster,
        ..TrainConfig::default()
    }
}

fn pairs(n: usize, seed: u64) -> Vec<TrainingPair> {
    (0..n)
        .map(|i| {
            let content = random_image(seed + i as u64, 16, 16);
            let target = RgbImage::from_fn(16, 16, |x, y| {
                let p = content.pixel(x, y);
                [0.2 * p[0], 0.5 * p[1] + 0.2, 0.6 * p[2] + 0.3]
            });
            TrainingPair {
                id: format!("p{i}"),
                content,
                target,
            }
        })
        .collect()
}

#[test]
fn zero_params_give_zero_code() {
    let g = init_generator(arch(), &mut seeded(0)).map(|_| 0.0);
    let code = encode_content(&RgbImage::filled(16, 8, [0.0; 3]), &g).unwrap();
    assert_eq!(code.shape(), [1, 8, 2, 4]);
    assert!(code.data().iter().all(|&v| v == 0.0));
}

#[test]
fn content_code_is_deterministic_and_quarter_size() {
    let g = init_generator(arch(), &mut seeded(1));
    let img = random_image(3, 20, 12);
    let a = encode_content(&img, &g).unwrap();
    assert_eq!(a.shape(), [1, 8, 3, 5]);
    assert_eq!(a, encode_content(&img, &g).unwrap());
    assert!(matches!(
        encode_content(&random_image(3, 18, 12), &g),
        Err(Error::Dimension(_))
    ));
}

fn flip_tensor(t: &Tensor<f32>) -> Tensor<f32> {
    let w = t.shape()[3];
    Tensor::from_fn(t.shape(), |n, c, y, x| t.get(n, c, y, w - 1 - x))
}

#[test]
fn encoder_is_flip_equivariant_with_symmetric_weights() {
    let g = init_generator(arch(), &mut seeded(2));
    let mut sym = ParamSet::new();
    for (name, t) in g.iter() {
        let t = if name.ends_with(".w") {
            let f = flip_tensor(t);
            Tensor::from_fn(t.shape(), |a, b, y, x| 0.5 * (t.get(a, b, y, x) + f.get(a, b, y, x)))
        } else {
            t.clone()
        };
        sym.push(name, t);
    }
    let img = random_image(4, 16, 16);
    let a = flip_tensor(&encode_content(&img, &sym).unwrap());
    let b = encode_content(&img.flip_horizontal(), &sym).unwrap();
    let err = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0f32, f32::max);
    assert!(err < 1e-5, "{err}");
}

#[test]
fn style_code_of_constant_image_has_zero_spread() {
    let bank = shared_bank(arch(), 3);
    let code = encode_style(&RgbImage::filled(16, 16, [0.3, 0.6, 0.2]), &bank).unwrap();
    assert_eq!(code.scales.len(), BANK_SCALES);
    for s in &code.scales {
        assert_eq!(s.mean.len(), 8);
        assert!(s.var.iter().all(|&v| v.abs() < 1e-10), "{:?}", s.var);
        assert!(s.std.iter().all(|&v| v >= 0.0));
    }
}

#[test]
fn style_statistics_ignore_spatial_order() {
    let bank = shared_bank(arch(), 3);
    for f in bank.features(&random_image(5, 16, 16).to_tensor()).unwrap() {
        let [n, c, h, w] = f.shape();
        // reverse the pixel order within every channel
        let rev = Tensor::from_fn([n, c, h, w], |n, c, y, x| f.get(n, c, h - 1 - y, w - 1 - x));
        let (a, b) = (instance_stats(&f), instance_stats(&rev));
        for i in 0..a.mean.len() {
            assert!((a.mean[i] - b.mean[i]).abs() < 1e-6);
            assert!((a.std[i] - b.std[i]).abs() < 1e-6);
        }
    }
}

#[test]
fn gram_matrix_cases() {
    let ones = Tensor::full([1, 1, 2, 2], 1.0f32);
    assert_eq!(gram_matrix(&ones), vec![1.0]);
    let bank = shared_bank(arch(), 3);
    let code = encode_style(&random_image(6, 16, 16), &bank).unwrap();
    for s in &code.scales {
        let c = s.mean.len();
        let g = nalgebra::DMatrix::from_fn(c, c, |i, j| s.gram[i * c + j] as f64);
        assert_eq!(g, g.transpose());
        let eig = nalgebra::SymmetricEigen::new(g.clone());
        assert!(eig.eigenvalues.iter().all(|&v| v > -1e-5 * g.norm().max(1.0)));
    }
}

#[test]
fn adain_injection_points_carry_style_statistics() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for trial in 0..5u64 {
        let g = init_generator(arch(), &mut seeded(trial));
        let bank = shared_bank(arch(), trial);
        let contents: Vec<RgbImage> = (0..3).map(|_| random_image(rng.gen(), 16, 16)).collect();
        let styles: Vec<StyleCode> = (0..3)
            .map(|_| encode_style(&random_image(rng.gen(), 16, 16), &bank).unwrap())
            .collect();
        let mut tape = Tape::new();
        let gb = g.bind(&mut tape, false);
        let x = Tensor::stack(&contents.iter().map(|c| c.to_tensor()).collect::<Vec<_>>()).unwrap();
        let xv = tape.constant(x);
        let refs: Vec<&StyleCode> = styles.iter().collect();
        let batch = StyleBatch::from_codes(&refs).unwrap();
        let t = generator_forward(&mut tape, &gb, xv, &batch).unwrap();
        for (i, &var) in t.injected.iter().enumerate() {
            let stats = instance_stats(tape.value(var));
            for j in 0..stats.mean.len() {
                assert!((stats.mean[j] - batch.mean[i][j]).abs() < 1e-4, "mean {i} {j}");
                assert!((stats.std[j] - batch.std[i][j]).abs() < 1e-4, "std {i} {j}");
            }
        }
        let out = tape.value(t.image);
        assert_eq!(out.shape(), [3, 3, 16, 16]);
        assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn self_styled_generation_keeps_shape_and_range() {
    let g = init_generator(arch(), &mut seeded(8));
    let bank = shared_bank(arch(), 8);
    let img = random_image(9, 20, 16);
    let code = encode_content(&img, &g).unwrap();
    let out = generate(&code, &encode_style(&img, &bank).unwrap(), &g).unwrap();
    assert_eq!(out.dims(), img.dims());
    assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn style_channel_mismatch_rejected() {
    let g = init_generator(arch(), &mut seeded(8));
    let wide = shared_bank(Architecture::new(3).unwrap(), 8);
    let img = random_image(9, 16, 16);
    let code = encode_content(&img, &g).unwrap();
    assert!(generate(&code, &encode_style(&img, &wide).unwrap(), &g).is_err());
    assert!(generate(&code, &StyleCode { scales: vec![] }, &g).is_err());
}

#[test]
fn discriminator_shapes_and_shift_equivariance() {
    let d = init_discriminator(arch(), &mut seeded(10));
    assert_eq!(discriminate(&random_image(1, 32, 32), &d).unwrap().shape(), [1, 1, 7, 7]);
    assert_eq!(discriminate(&random_image(1, 48, 16), &d).unwrap().shape(), [1, 1, 3, 11]);

    // shift right by one score stride (4 px)
    let img = random_image(2, 48, 48);
    let shifted = RgbImage::from_fn(48, 48, |x, y| img.pixel(x.saturating_sub(4), y));
    let a = discriminate(&img, &d).unwrap();
    let b = discriminate(&shifted, &d).unwrap();
    // scores whose 22 px receptive field avoids padding and the shifted-in strip
    for y in 2..=8 {
        for x in 3..=8 {
            let (p, q) = (a.get(0, 0, y, x - 1), b.get(0, 0, y, x));
            assert!((p - q).abs() < 1e-5, "({x},{y}): {p} vs {q}");
        }
    }

    let zero = d.map(|_| 0.0);
    let s = discriminate(&img, &zero).unwrap();
    assert!(s.data().iter().all(|&v| v == s.data()[0]));
}

#[test]
fn loss_arithmetic() {
    let target = Tensor::full([1, 3, 4, 4], 0.5f32);
    let mut tape = Tape::new();
    let t = tape.constant(target.clone());
    let f = tape.constant(target.clone());
    let ones = tape.constant(Tensor::full([1, 1, 3, 3], 1.0));
    let (total, l1, adv) = generator_loss(&mut tape, f, t, ones, 100.0, 1.0).unwrap();
    assert_eq!(tape.value(total).item().unwrap(), 0.0);
    assert_eq!((tape.value(l1).item().unwrap(), tape.value(adv).item().unwrap()), (0.0, 0.0));

    let mut tape = Tape::new();
    let t = tape.constant(target.clone());
    let f = tape.constant(target.map(|v| v + 0.02));
    let half = tape.constant(Tensor::full([1, 1, 3, 3], 0.5));
    let (total, _, _) = generator_loss(&mut tape, f, t, half, 100.0, 1.0).unwrap();
    assert!((tape.value(total).item().unwrap() - 2.25).abs() < 1e-5);

    let mut tape = Tape::new();
    let t = tape.constant(target.clone());
    let f = tape.constant(target.map(|v| v + 0.1));
    let half = tape.constant(Tensor::full([1, 1, 3, 3], 0.5));
    let (total, l1, _) = generator_loss(&mut tape, f, t, half, 1.0, 0.0).unwrap();
    assert_eq!(tape.value(total).item().unwrap(), tape.value(l1).item().unwrap());

    let mut tape = Tape::new();
    let real = tape.constant(Tensor::full([1, 1, 2, 2], 1.0f32));
    let fake = tape.constant(Tensor::full([1, 1, 2, 2], 0.0f32));
    let d = discriminator_loss(&mut tape, real, fake).unwrap();
    assert_eq!(tape.value(d).item().unwrap(), 0.0);
}

#[test]
fn loss_decomposes_and_gradients_reach_every_layer() {
    let config = small_config(0);
    let model = GanModel::init(&config);
    let data = pairs(2, 50);
    let mut tape = Tape::new();
    let g = model.generator.bind(&mut tape, true);
    let x = tape.constant(Tensor::stack(&data.iter().map(|p| p.content.to_tensor()).collect::<Vec<_>>()).unwrap());
    let y = tape.constant(Tensor::stack(&data.iter().map(|p| p.target.to_tensor()).collect::<Vec<_>>()).unwrap());
    let codes: Vec<StyleCode> = data.iter().map(|p| model.style_code(&p.target).unwrap()).collect();
    let refs: Vec<&StyleCode> = codes.iter().collect();
    let t = generator_forward(&mut tape, &g, x, &StyleBatch::from_codes(&refs).unwrap()).unwrap();
    let d = model.discriminator.bind(&mut tape, false);
    let scores = discriminator_forward(&mut tape, &d, t.image).unwrap();
    let (total, l1, adv) = generator_loss(&mut tape, t.image, y, scores, 100.0, 1.0).unwrap();
    let (tv, lv, av) = (
        tape.value(total).item().unwrap() as f64,
        tape.value(l1).item().unwrap() as f64,
        tape.value(adv).item().unwrap() as f64,
    );
    assert!(tv > 0.0);
    assert!((tv - (100.0 * lv + av)).abs() <= 1e-6 * tv.max(1.0), "{tv} vs {}", 100.0 * lv + av);

    let vars = g.vars.clone();
    let grads = tape.backward(total).unwrap();
    let mut layers: BTreeSet<String> = BTreeSet::new();
    let mut live: BTreeSet<String> = BTreeSet::new();
    for ((name, t), v) in model.generator.iter().zip(vars) {
        let layer = name.rsplit_once('.').unwrap().0.to_string();
        layers.insert(layer.clone());
        let norm: f32 = grads.get_or_zeros(v, t.shape()).data().iter().map(|g| g * g).sum();
        if norm > 0.0 {
            live.insert(layer);
        }
    }
    assert_eq!(layers, live);
}

#[test]
fn zero_epochs_returns_initialization() {
    let config = TrainConfig {
        epochs: 0,
        ..small_config(0)
    };
    let dir = tempfile::tempdir().unwrap();
    let out = train_cluster(&pairs(3, 1), &pairs(1, 9), &config, Some(dir.path())).unwrap();
    assert!(out.log.is_empty());
    assert_eq!(out.model, GanModel::init(&config));
    let (loaded, manifest) = load_checkpoint(dir.path(), 0).unwrap();
    assert_eq!(loaded, out.model);
    assert_eq!(manifest.epoch, 0);
}

#[test]
fn training_is_reproducible() {
    let config = small_config(0);
    let a = train_cluster(&pairs(5, 1), &pairs(2, 9), &config, None).unwrap();
    let b = train_cluster(&pairs(5, 1), &pairs(2, 9), &config, None).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(a.model, b.model);
    assert_eq!(a.log.len(), 2);
    assert_eq!(a.log[1].step, 4);
    assert!(a.log.iter().all(|r| r.val_l1.is_some()));
}

#[test]
fn training_rejects_tiny_clusters() {
    assert!(train_cluster(&pairs(1, 1), &[], &small_config(0), None).is_err());
}

#[test]
fn checkpoints_are_isolated_per_cluster() {
    let root = tempfile::tempdir().unwrap();
    let (d0, d1) = (root.path().join("0"), root.path().join("1"));
    train_cluster(&pairs(3, 1), &[], &small_config(0), Some(&d0)).unwrap();
    let before = std::fs::read(d0.join(WEIGHTS)).unwrap();
    train_cluster(&pairs(3, 2), &[], &small_config(1), Some(&d1)).unwrap();
    assert_eq!(std::fs::read(d0.join(WEIGHTS)).unwrap(), before);

    for (dir, cluster) in [(&d0, 0), (&d1, 1)] {
        let files: BTreeSet<String> = std::fs::read_dir(dir)
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        assert_eq!(files, BTreeSet::from([MANIFEST.to_string(), WEIGHTS.to_string()]));
        assert_eq!(read_manifest(dir).unwrap().cluster, cluster);
    }
    assert!(train_cluster(&pairs(3, 2), &[], &small_config(1), Some(&d0)).is_err());
    assert_eq!(std::fs::read(d0.join(WEIGHTS)).unwrap(), before);
    assert!(load_checkpoint(&d0, 1).is_err());
}

#[test]
fn divergence_aborts_and_keeps_last_good_checkpoint() {
    let config = TrainConfig {
        lr: 1e30,
        ..small_config(0)
    };
    let dir = tempfile::tempdir().unwrap();
    let err = train_cluster(&pairs(4, 1), &[], &config, Some(dir.path())).err().unwrap();
    let Error::NonFinite { last_good_epoch, .. } = err else { panic!("{err}") };
    let (model, manifest) = load_checkpoint(dir.path(), 0).unwrap();
    assert_eq!(manifest.epoch, last_good_epoch);
    assert!(model.generator.is_finite());
}

#[test]
fn synthesis_contract() {
    let config = small_config(2);
    let dir = tempfile::tempdir().unwrap();
    let out = train_cluster(&pairs(3, 1), &[], &config, Some(dir.path())).unwrap();
    let content = random_image(77, 16, 16);
    let pool: Vec<RgbImage> = pairs(3, 1).into_iter().map(|p| p.target).collect();

    let a = synthesize(&content, 2, &pool, dir.path(), 5).unwrap();
    assert_eq!(a, synthesize(&content, 2, &pool, dir.path(), 5).unwrap());
    assert_eq!(a, synthesize_with(&out.model, &content, &pool, 2, 5).unwrap());

    let single = &pool[..1];
    let s1 = synthesize(&content, 2, single, dir.path(), 1).unwrap();
    for seed in 2..6 {
        assert_eq!(synthesize(&content, 2, single, dir.path(), seed).unwrap(), s1);
    }
    assert!(synthesize(&content, 2, &[], dir.path(), 1).is_err());
    let missing = dir.path().join("nope");
    assert!(matches!(
        synthesize(&content, 2, &pool, &missing, 1),
        Err(Error::MissingCheckpoint(_))
    ));
}
