//! End-to-end acceptance checks. Each test prints one PASS/FAIL line to
//! stderr (written directly, so it shows even when libtest captures output).

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use discgan_core::clustering::{elbow_scan, kmeans_fit, suggest_k};
use discgan_core::discgan::{
    encode_style, evaluation_styles, generator_forward, init_generator, mean_l1, shared_bank,
    synthesize_with, train_cluster, with_flips, Architecture, GanModel, LogRow, StyleBatch, StyleCode,
    TrainConfig,
};
use discgan_core::metrics::{fid, psnr, sqrtm_eigen, sqrtm_newton_schulz, ssim, FeatureCloud, Psnr};
use discgan_core::physics::{default_water_types, render_underwater, render_value, WaterType};
use discgan_core::pipeline::{cluster_pairs, feature_vector, render_all, rendered_features, FeatureSettings};
use discgan_core::rng::seeded;
use discgan_core::scene::{build_dataset, SceneSpec};
use discgan_core::{DepthMap, RgbImage};
use discgan_tensor::{conv2d, conv2d_transpose, Shape, Tape, Tensor, Var};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn report(n: u32, name: &str, ok: bool, detail: &str) {
    let verdict = if ok { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "[acceptance] criterion {n} ({name}): {verdict}: {detail}");
}

// ---------------------------------------------------------------------------
// 1. autodiff

const FD_STEP: f64 = 1e-5;

fn uniform(rng: &mut ChaCha8Rng, shape: Shape, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(lo..hi))
}

type Loss = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> discgan_tensor::Result<Var>>;

/// Max of `|analytic - numeric| / max(|analytic|, |numeric|, 1e-6)` over
/// every input element, with central differences evaluated here.
fn fd_error(inputs: &[Tensor<f64>], f: &Loss) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&mut tape, &vars).unwrap();
    let grads = tape.backward(loss).unwrap();
    let eval = |xs: &[Tensor<f64>]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|t| tape.constant(t.clone())).collect();
        let loss = f(&mut tape, &vars).unwrap();
        tape.value(loss).item().unwrap()
    };
    let mut worst = 0.0f64;
    let mut work = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads.get_or_zeros(vars[i], input.shape());
        for j in 0..input.numel() {
            let orig = input.data()[j];
            work[i].data_mut()[j] = orig + FD_STEP;
            let plus = eval(&work);
            work[i].data_mut()[j] = orig - FD_STEP;
            let minus = eval(&work);
            work[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let a = analytic.data()[j];
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
        }
    }
    worst
}

/// Sum of the op's output against fixed random weights.
fn contract(t: &mut Tape<f64>, y: Var, seed: u64) -> discgan_tensor::Result<Var> {
    let w = uniform(&mut ChaCha8Rng::seed_from_u64(seed ^ 0xabcd), t.value(y).shape(), -1.0, 1.0);
    let wv = t.constant(w);
    let p = t.mul(y, wv)?;
    Ok(t.sum(p))
}

fn operator_cases(seed: u64) -> Vec<(&'static str, Vec<Tensor<f64>>, Loss)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = uniform(&mut rng, [2, 3, 6, 6], -1.0, 1.0);
    let y = uniform(&mut rng, [2, 3, 6, 6], -1.0, 1.0);
    let bias = uniform(&mut rng, [1, 3, 1, 1], -1.0, 1.0);
    let k = uniform(&mut rng, [4, 3, 4, 4], -1.0, 1.0);
    let k3 = uniform(&mut rng, [4, 3, 3, 3], -1.0, 1.0);
    let small = uniform(&mut rng, [2, 4, 3, 3], -1.0, 1.0);
    let kt = uniform(&mut rng, [4, 2, 4, 4], -1.0, 1.0);
    let mean: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let std: Vec<f64> = (0..6).map(|_| rng.gen_range(0.2..2.0)).collect();
    vec![
        ("add", vec![x.clone(), y.clone()], Box::new(move |t, v| {
            let o = t.add(v[0], v[1])?;
            contract(t, o, seed)
        })),
        ("sub", vec![x.clone(), y.clone()], Box::new(move |t, v| {
            let o = t.sub(v[0], v[1])?;
            contract(t, o, seed)
        })),
        ("mul", vec![x.clone(), y.clone()], Box::new(move |t, v| {
            let o = t.mul(v[0], v[1])?;
            contract(t, o, seed)
        })),
        ("scale", vec![x.clone()], Box::new(move |t, v| {
            let o = t.scale(v[0], -1.7);
            contract(t, o, seed)
        })),
        ("add_bias", vec![x.clone(), bias], Box::new(move |t, v| {
            let o = t.add_bias(v[0], v[1])?;
            contract(t, o, seed)
        })),
        ("conv2d s2 p1", vec![x.clone(), k.clone()], Box::new(move |t, v| {
            let o = t.conv2d(v[0], v[1], 2, 1)?;
            contract(t, o, seed)
        })),
        ("conv2d s1 p1", vec![x.clone(), k3], Box::new(move |t, v| {
            let o = t.conv2d(v[0], v[1], 1, 1)?;
            contract(t, o, seed)
        })),
        ("conv2d_transpose s2 p1", vec![small, kt], Box::new(move |t, v| {
            let o = t.conv2d_transpose(v[0], v[1], 2, 1)?;
            contract(t, o, seed)
        })),
        ("leaky_relu", vec![x.clone()], Box::new(move |t, v| {
            let o = t.leaky_relu(v[0], 0.2);
            contract(t, o, seed)
        })),
        ("relu", vec![x.clone()], Box::new(move |t, v| {
            let o = t.relu(v[0]);
            contract(t, o, seed)
        })),
        ("sigmoid", vec![x.clone()], Box::new(move |t, v| {
            let o = t.sigmoid(v[0]);
            contract(t, o, seed)
        })),
        ("adain", vec![x.clone()], Box::new(move |t, v| {
            let o = t.adain(v[0], &mean, &std)?;
            contract(t, o, seed)
        })),
        ("sum", vec![x.clone()], Box::new(|t, v| {
            let sq = t.mul(v[0], v[0])?;
            Ok(t.sum(sq))
        })),
        ("mean", vec![x.clone()], Box::new(|t, v| {
            let sq = t.mul(v[0], v[0])?;
            Ok(t.mean(sq))
        })),
        ("l1_loss", vec![x.clone(), y.clone()], Box::new(|t, v| t.l1_loss(v[0], v[1]))),
        ("mse_loss", vec![x, y], Box::new(|t, v| t.mse_loss(v[0], v[1]))),
    ]
}

#[test]
fn criterion_1_autodiff_correctness() {
    let start = Instant::now();
    let mut worst = (0.0f64, "", 0u64);
    for seed in 1..=5u64 {
        for (name, inputs, f) in operator_cases(seed) {
            let e = fd_error(&inputs, &f);
            if e > worst.0 {
                worst = (e, name, seed);
            }
        }
    }
    let mut adjoint = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for &(h, k, s, p) in &[(6, 3, 1, 1), (8, 4, 2, 1), (7, 3, 2, 0), (5, 2, 1, 0), (6, 4, 2, 1)] {
        for _ in 0..5 {
            let x = uniform(&mut rng, [2, 3, h, h], -1.0, 1.0);
            let w = uniform(&mut rng, [4, 3, k, k], -1.0, 1.0);
            let cx = conv2d(&x, &w, s, p).unwrap();
            let y = uniform(&mut rng, cx.shape(), -1.0, 1.0);
            let lhs = cx.dot(&y).unwrap();
            let rhs = x.dot(&conv2d_transpose(&y, &w, s, p).unwrap()).unwrap();
            adjoint = adjoint.max((lhs - rhs).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let ok = worst.0 < 1e-4 && adjoint < 1e-10 && secs < 60.0;
    report(
        1,
        "autodiff correctness",
        ok,
        &format!(
            "max rel err {:.2e} ({} seed {}), adjointness gap {adjoint:.2e}, {secs:.1}s",
            worst.0, worst.1, worst.2
        ),
    );
    assert!(ok);
}

// ---------------------------------------------------------------------------
// 2. renderer

#[test]
fn criterion_2_renderer_physics() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut identity_ok = true;
    let mut convex_violations = 0usize;
    let mut saturation = 0.0f64;
    for _ in 0..1_000_000 {
        let j: f64 = rng.gen_range(0.0..=1.0);
        let b: f64 = rng.gen_range(0.0..=1.0);
        let k: f64 = rng.gen_range(0.0..5.0);
        let d: f64 = rng.gen_range(0.0..20.0);
        identity_ok &= render_value(j, b, k, 0.0) == j && render_value(j, b, 0.0, d) == j;
        let v = render_value(j, b, k, d);
        if !(v >= j.min(b) && v <= j.max(b)) {
            convex_violations += 1;
        }
        if k > 0.0 {
            saturation = saturation.max((render_value(j, b, k, 20.0 / k) - b).abs());
        }
    }
    // Whole images: zero depth and zero attenuation return the clean image bit for bit.
    let clean = RgbImage::from_fn(16, 12, |x, y| [x as f32 / 16.0, y as f32 / 12.0, 0.37]);
    let deep = DepthMap::filled(16, 12, 3.0);
    let still = WaterType::new("still", [0.0; 3], [0.1, 0.5, 0.7]).unwrap();
    for w in default_water_types() {
        identity_ok &= render_underwater(&clean, &DepthMap::filled(16, 12, 0.0), &w).unwrap() == clean;
    }
    identity_ok &= render_underwater(&clean, &deep, &still).unwrap() == clean;

    let secs = start.elapsed().as_secs_f64();
    let ok = identity_ok && convex_violations == 0 && saturation < 1e-6 && secs < 30.0;
    report(
        2,
        "renderer physics",
        ok,
        &format!(
            "identities exact: {identity_ok}, convexity violations {convex_violations}/1e6, max |I - B| at Kd=20: {saturation:.2e}, {secs:.1}s"
        ),
    );
    assert!(ok);
}

// ---------------------------------------------------------------------------
// 3. clustering oracle

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Minimum within-cluster sum of squares over every labeling with no
/// empty cluster.
fn exhaustive_optimum(points: &[Vec<f64>], k: usize) -> f64 {
    let n = points.len();
    let dim = points[0].len();
    let mut labels = vec![0usize; n];
    let mut best = f64::INFINITY;
    loop {
        let mut counts = vec![0usize; k];
        let mut sums = vec![vec![0.0; dim]; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for d in 0..dim {
                sums[l][d] += p[d];
            }
        }
        if counts.iter().all(|&c| c > 0) {
            let centroids: Vec<Vec<f64>> = sums
                .iter()
                .zip(&counts)
                .map(|(s, &c)| s.iter().map(|v| v / c as f64).collect())
                .collect();
            let cost: f64 = points.iter().zip(&labels).map(|(p, &l)| sq(p, &centroids[l])).sum();
            best = best.min(cost);
        }
        let mut i = 0;
        loop {
            if i == n {
                return best;
            }
            labels[i] += 1;
            if labels[i] < k {
                break;
            }
            labels[i] = 0;
            i += 1;
        }
    }
}

#[test]
fn criterion_3_clustering_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_gap = 0.0f64;
    let mut runs = 0;
    let mut trace_ok = true;
    for draw in 0..50u64 {
        let n = rng.gen_range(3..=8);
        let dim = rng.gen_range(1..=3);
        let points: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        for k in 1..=3 {
            let model = kmeans_fit(&points, k, draw, 100, 16).unwrap();
            let opt = exhaustive_optimum(&points, k);
            worst_gap = worst_gap.max((model.inertia - opt).abs());
            trace_ok &= model.trace.windows(2).all(|w| w[1] <= w[0]);
            runs += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let ok = worst_gap < 1e-9 && trace_ok && secs < 60.0;
    report(
        3,
        "clustering oracle",
        ok,
        &format!("{runs} fits, max |inertia - optimum| {worst_gap:.2e}, traces monotone: {trace_ok}, {secs:.1}s"),
    );
    assert!(ok);
}

// ---------------------------------------------------------------------------
// 4. elbow recovery

/// Four Gaussian blobs centred on distinct coordinate axes of a
/// style-feature-sized space.
fn four_blobs(seed: u64) -> Vec<Vec<f64>> {
    const DIM: usize = 49;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.02).unwrap();
    let mut axes: Vec<usize> = (0..DIM).collect();
    for i in 0..4 {
        let j = rng.gen_range(i..DIM);
        axes.swap(i, j);
    }
    let mut points = Vec::new();
    for &axis in &axes[..4] {
        let per_blob = rng.gen_range(10..=20);
        for _ in 0..per_blob {
            let mut p: Vec<f64> = (0..DIM).map(|_| noise.sample(&mut rng)).collect();
            p[axis] += 1.0;
            points.push(p);
        }
    }
    points
}

#[test]
fn criterion_4_elbow_recovery() {
    let start = Instant::now();
    let ks: Vec<usize> = (1..=8).collect();
    let mut misses = Vec::new();
    for seed in 0..100u64 {
        let curve = elbow_scan(&four_blobs(seed), &ks, seed, 100, 16).unwrap();
        let k = suggest_k(&curve).unwrap().k;
        if k != 4 {
            misses.push((seed, k));
        }
    }
    let hits = 100 - misses.len();
    let secs = start.elapsed().as_secs_f64();
    let ok = hits >= 95 && secs < 120.0;
    report(4, "elbow recovery", ok, &format!("k = 4 on {hits}/100 seeds (misses {misses:?}), {secs:.1}s"));
    assert!(ok);
}

// ---------------------------------------------------------------------------
// 5. AdaIN contract

fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> RgbImage {
    let tint = [rng.gen_range(0.0..1.0f32), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
    let amp = rng.gen_range(0.05..0.5f32);
    let noise: Vec<f32> = (0..w * h * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
    RgbImage::from_fn(w, h, |x, y| {
        let i = (y * w + x) * 3;
        [tint[0] + amp * noise[i], tint[1] + amp * noise[i + 1], tint[2] + amp * noise[i + 2]]
    })
}

#[test]
fn criterion_5_adain_contract() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for trial in 0..8u64 {
        let arch = Architecture::new(4).unwrap();
        let g = init_generator(arch, &mut seeded(trial));
        let bank = shared_bank(arch, trial + 100);
        let n = 3;
        let contents: Vec<RgbImage> = (0..n).map(|_| random_image(&mut rng, 16, 16)).collect();
        let styles: Vec<StyleCode> = (0..n)
            .map(|_| encode_style(&random_image(&mut rng, 16, 16), &bank).unwrap())
            .collect();
        let refs: Vec<&StyleCode> = styles.iter().collect();
        let batch = StyleBatch::from_codes(&refs).unwrap();
        let mut tape = Tape::new();
        let gb = g.bind(&mut tape, false);
        let x = Tensor::stack(&contents.iter().map(RgbImage::to_tensor).collect::<Vec<_>>()).unwrap();
        let xv = tape.constant(x);
        let trace = generator_forward(&mut tape, &gb, xv, &batch).unwrap();
        for (point, &var) in trace.injected.iter().enumerate() {
            let act = tape.value(var);
            let [b, c, h, w] = act.shape();
            let hw = h * w;
            for i in 0..b * c {
                let plane: Vec<f64> = act.data()[i * hw..(i + 1) * hw].iter().map(|&v| v as f64).collect();
                let mean = plane.iter().sum::<f64>() / hw as f64;
                let var = plane.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / hw as f64;
                let std = (var + 1e-5).sqrt();
                worst = worst
                    .max((mean - batch.mean[point][i] as f64).abs())
                    .max((std - batch.std[point][i] as f64).abs());
                checked += 1;
            }
        }
    }
    let ok = worst < 1e-4;
    report(
        5,
        "AdaIN contract",
        ok,
        &format!("{checked} (sample, channel) planes at 2 injection points, max stat error {worst:.2e}"),
    );
    assert!(ok);
}

// ---------------------------------------------------------------------------
// 6. metric golden values

fn cloud(values: &[f64]) -> FeatureCloud {
    FeatureCloud::from_vectors(values.iter().map(|&v| vec![v]).collect()).unwrap()
}

#[test]
fn criterion_6_metric_golden_values() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut lines = Vec::new();
    let mut ok = true;

    let x = FeatureCloud::from_vectors((0..50).map(|_| (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect())
        .unwrap();
    let self_fid = fid(&x, &x).unwrap();
    ok &= self_fid < 1e-8;
    lines.push(format!("fid(X,X) = {self_fid:.1e}"));

    // Unit mean shift, equal spread: (0 - 1)^2 = 1.
    let shift = fid(&cloud(&[-1.0, 1.0]), &cloud(&[0.0, 2.0])).unwrap();
    // Equal means, variances 2 and (1 + sqrt 2)^2: (sqrt(2) - (1 + sqrt 2))^2 = 1.
    let s = (1.0 + 2f64.sqrt()) / 2f64.sqrt();
    let spread = fid(&cloud(&[-1.0, 1.0]), &cloud(&[-s, s])).unwrap();
    ok &= (shift - 1.0).abs() < 1e-9 && (spread - 1.0).abs() < 1e-9;
    lines.push(format!("1-D cases {shift:.12}, {spread:.12}"));

    let img = random_image(&mut rng, 24, 20);
    let self_ssim = ssim(&img, &img).unwrap();
    ok &= self_ssim == 1.0;
    let c1 = 0.01f64 * 0.01;
    let const_ssim = ssim(&RgbImage::filled(16, 16, [0.0; 3]), &RgbImage::filled(16, 16, [1.0; 3])).unwrap();
    ok &= (const_ssim - c1 / (1.0 + c1)).abs() < 1e-9;
    lines.push(format!("ssim(x,x) = {self_ssim}, constant pair {const_ssim:.12e} vs {:.12e}", c1 / (1.0 + c1)));

    // 3 of 75 channel values off by 0.5: MSE = 0.75 / 75 = 0.01, PSNR = 20 dB.
    let a = RgbImage::filled(5, 5, [0.25; 3]);
    let b = RgbImage::from_fn(5, 5, |x, y| if (x, y) == (2, 3) { [0.75; 3] } else { [0.25; 3] });
    let p = psnr(&a, &b, 1.0).unwrap();
    ok &= matches!(p, Psnr::Db(v) if (v - 20.0).abs() < 1e-9);
    lines.push(format!("psnr case {p}"));

    let mut sqrt_gap = 0.0f64;
    for trial in 0..30 {
        let dim = 1 + trial % 12;
        let m = DMatrix::from_fn(dim, dim, |_, _| rng.gen_range(-1.0..1.0));
        let spd = &m * m.transpose() + DMatrix::identity(dim, dim) * 0.05;
        let e = sqrtm_eigen(&spd).unwrap();
        let ns = sqrtm_newton_schulz(&spd, 500, 1e-15).unwrap();
        sqrt_gap = sqrt_gap.max((&e - &ns).abs().max());
    }
    ok &= sqrt_gap < 1e-6;
    lines.push(format!("eigen vs Newton-Schulz {sqrt_gap:.1e}"));

    report(6, "metric golden values", ok, &lines.join("; "));
    assert!(ok);
}

// ---------------------------------------------------------------------------
// 7. training smoke

struct ClusterRun {
    log: Vec<LogRow>,
    ratio: f64,
}

#[test]
fn criterion_7_training_smoke() {
    let start = Instant::now();
    let seed = 7;
    let dataset = build_dataset(16, 0.8, seed, &SceneSpec::new(0, 32), false).unwrap();
    let n_train = dataset.train.len();
    let scenes: Vec<_> = dataset.train.into_iter().chain(dataset.val).collect();
    let is_val: Vec<bool> = (0..scenes.len()).map(|i| i >= n_train).collect();
    let waters = default_water_types();
    let items = render_all(&scenes, &waters).unwrap();
    let features = FeatureSettings { bins: 16, max_depth: 8.0, depth_weight: 1.0 };
    let points = rendered_features(&items, &scenes, &features).unwrap();
    let clusters = kmeans_fit(&points, 4, seed, 100, 16).unwrap();

    let config = |cluster| TrainConfig { seed, cluster, ..TrainConfig::default() };
    let run_cluster = |c: usize| -> (ClusterRun, GanModel, Vec<(RgbImage, usize)>, Vec<RgbImage>) {
        let (train, val, val_scenes) = cluster_pairs(&clusters, c, &items, &scenes, &is_val).unwrap();
        let train = with_flips(&train);
        let cfg = config(c);
        let init = GanModel::init(&cfg);
        let pool: Vec<StyleCode> = train.iter().map(|p| init.style_code(&p.target).unwrap()).collect();
        let picks = evaluation_styles(train.len(), pool.len(), seed, c);
        let styles: Vec<&StyleCode> = picks.iter().map(|&i| &pool[i]).collect();
        let before = mean_l1(&init, &train, &styles).unwrap();
        let outcome = train_cluster(&train, &val, &cfg, None).unwrap();
        let after = mean_l1(&outcome.model, &train, &styles).unwrap();
        let contents = val.into_iter().zip(val_scenes).map(|(p, s)| (p.content, s)).collect();
        let targets = train.into_iter().map(|p| p.target).collect();
        (ClusterRun { log: outcome.log, ratio: after / before }, outcome.model, contents, targets)
    };

    let mut ratios = Vec::new();
    let mut first_log = None;
    let (mut near, mut total) = (0, 0);
    for c in 0..4 {
        let (run, model, contents, pool) = run_cluster(c);
        ratios.push(run.ratio);
        for (content, s) in contents {
            let img = synthesize_with(&model, &content, &pool, c, seed + s as u64).unwrap();
            let f = feature_vector(&img, &scenes[s].depth, &features).unwrap();
            total += 1;
            if clusters.assign(&f).unwrap() == c {
                near += 1;
            }
        }
        if c == 0 {
            first_log = Some(run.log);
        }
    }
    let rerun = run_cluster(0).0.log;
    let bits = |log: &[LogRow]| -> Vec<u64> {
        log.iter()
            .flat_map(|r| {
                [r.loss_g, r.loss_g_l1, r.loss_g_adv, r.loss_d, r.val_l1.unwrap_or(f64::NAN)]
                    .map(f64::to_bits)
                    .into_iter()
                    .chain([r.epoch as u64, r.step as u64])
            })
            .collect()
    };
    let first_log = first_log.unwrap();
    let identical = first_log.len() == 30 && bits(&first_log) == bits(&rerun);
    let a = ratios.iter().all(|&r| r < 0.5);
    let c = total > 0 && near * 4 >= total * 3;
    let secs = start.elapsed().as_secs_f64();
    let detail = format!(
        "(a) final/initial train L1 {:?}: {}; (b) rerun log bit-identical: {identical}; (c) nearest centroid is the target for {near}/{total}; {secs:.0}s",
        ratios.iter().map(|r| format!("{r:.3}")).collect::<Vec<_>>(),
        if a { "all < 0.5" } else { "not all < 0.5" },
    );
    let ok = a && identical && c;
    report(7, "training smoke", ok, &detail);
    assert!(ok);
}

// ---------------------------------------------------------------------------
// 8. pipeline determinism

fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn run_pipeline(config: &Path, out: &Path, extra: &[&str]) {
    let steps: [&[&str]; 7] = [
        &["render", "--procedural"],
        &["elbow"],
        &["cluster"],
        &["train", "1"],
        &["synthesize", "1"],
        &["evaluate"],
        &["train", "2"],
    ];
    for step in steps {
        let output = Command::new(env!("CARGO_BIN_EXE_discgan"))
            .args(step)
            .arg("--config")
            .arg(config)
            .arg("--out")
            .arg(out)
            .args(extra)
            .output()
            .unwrap();
        assert!(
            output.status.success(),
            "{step:?} failed: {}",
            String::from_utf8_lossy(&output.stderr)
        );
    }
}

#[test]
fn criterion_8_pipeline_determinism() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    std::fs::write(
        &config,
        "seed = 11\n\n[dataset]\nscenes = 16\nresolution = 32\n\n[train]\nepochs = 2\nbase_channels = 8\n",
    )
    .unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    run_pipeline(&config, &a, &[]);
    run_pipeline(&config, &b, &["--threads", "1"]);
    let (ta, tb) = (tree(&a), tree(&b));
    let differing: Vec<&String> = ta
        .keys()
        .chain(tb.keys())
        .filter(|k| ta.get(*k) != tb.get(*k))
        .collect();
    let ok = !ta.is_empty() && differing.is_empty();
    let secs = start.elapsed().as_secs_f64();
    report(
        8,
        "pipeline determinism",
        ok,
        &format!("{} files per run, {} differ {differing:?}, {secs:.0}s", ta.len(), differing.len()),
    );
    assert!(ok);
}
