//! Per-cluster adversarial training.

use std::path::Path;

use discgan_tensor::{Adam, Tape, Tensor, Var};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::checkpoint::{claim_checkpoint_dir, save_checkpoint};
use super::network::{
    check_divisible, discriminator_forward, encode_style, generator_forward, init_discriminator,
    init_generator, Architecture, StyleBank, StyleBatch, StyleCode,
};
use super::params::{Bound, ParamSet};
use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::io::{csv_float, write_csv};
use crate::rng::substream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lambda_rec: f64,
    pub lambda_adv: f64,
    pub base_channels: usize,
    pub seed: u64,
    pub cluster: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            epochs: 30,
            batch_size: 4,
            lambda_rec: 100.0,
            lambda_adv: 1.0,
            base_channels: 16,
            seed: 0,
            cluster: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.lambda_rec >= 0.0 && self.lambda_adv >= 0.0) {
            return bad(format!(
                "loss weights must be non-negative (lambda_rec={}, lambda_adv={})",
                self.lambda_rec, self.lambda_adv
            ));
        }
        if self.lambda_rec == 0.0 && self.lambda_adv == 0.0 {
            return bad("lambda_rec and lambda_adv cannot both be zero".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.lr));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad(format!("betas ({}, {}) must lie in [0, 1)", self.beta1, self.beta2));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        Architecture::new(self.base_channels)?;
        Ok(())
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            base_channels: self.base_channels,
        }
    }
}

/// Content image and its paired ground truth under the cluster's water.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingPair {
    pub id: String,
    pub content: RgbImage,
    pub target: RgbImage,
}

impl TrainingPair {
    pub fn flipped(&self) -> Self {
        Self {
            id: format!("{}_flip", self.id),
            content: self.content.flip_horizontal(),
            target: self.target.flip_horizontal(),
        }
    }
}

/// Every pair followed by its mirror image.
pub fn with_flips(pairs: &[TrainingPair]) -> Vec<TrainingPair> {
    pairs.iter().flat_map(|p| [p.clone(), p.flipped()]).collect()
}

/// Generator, discriminator and the frozen style bank of one cluster.
#[derive(Clone, Debug, PartialEq)]
pub struct GanModel {
    pub arch: Architecture,
    pub generator: ParamSet,
    pub discriminator: ParamSet,
    pub bank: StyleBank,
}

impl GanModel {
    /// Deterministic initialization; the bank depends on the seed only, so
    /// every cluster shares it.
    pub fn init(config: &TrainConfig) -> Self {
        let arch = config.architecture();
        let mut rng = substream(config.seed, &format!("init/{}", config.cluster));
        let generator = init_generator(arch, &mut rng);
        let discriminator = init_discriminator(arch, &mut rng);
        Self {
            arch,
            generator,
            discriminator,
            bank: shared_bank(arch, config.seed),
        }
    }

    pub fn style_code(&self, img: &RgbImage) -> Result<StyleCode> {
        encode_style(img, &self.bank)
    }

    /// Batched generation without gradients.
    pub fn translate_batch(&self, contents: &[&RgbImage], styles: &[&StyleCode]) -> Result<Vec<RgbImage>> {
        let x = Tensor::stack(&contents.iter().map(|c| c.to_tensor()).collect::<Vec<_>>())?;
        let mut tape = Tape::new();
        let g = self.generator.bind(&mut tape, false);
        let xv = tape.constant(x);
        let t = generator_forward(&mut tape, &g, xv, &StyleBatch::from_codes(styles)?)?;
        let out = tape.value(t.image);
        (0..contents.len()).map(|n| RgbImage::from_tensor(out, n)).collect()
    }

    pub fn translate(&self, content: &RgbImage, style: &StyleCode) -> Result<RgbImage> {
        Ok(self.translate_batch(&[content], &[style])?.remove(0))
    }
}

pub fn shared_bank(arch: Architecture, seed: u64) -> StyleBank {
    StyleBank::new(arch, &mut substream(seed, "bank"))
}

/// `(total, l1, adv)` with `total = lambda_rec * l1 + lambda_adv * mean((D(fake) - 1)^2)`.
pub fn generator_loss(
    tape: &mut Tape<f32>,
    fake: Var,
    target: Var,
    d_fake: Var,
    lambda_rec: f32,
    lambda_adv: f32,
) -> Result<(Var, Var, Var)> {
    let l1 = tape.l1_loss(fake, target)?;
    let ones = tape.constant(Tensor::full(tape.value(d_fake).shape(), 1.0));
    let adv = tape.mse_loss(d_fake, ones)?;
    let a = tape.scale(l1, lambda_rec);
    let b = tape.scale(adv, lambda_adv);
    Ok((tape.add(a, b)?, l1, adv))
}

/// `mean((D(real) - 1)^2) + mean(D(fake)^2)`.
pub fn discriminator_loss(tape: &mut Tape<f32>, d_real: Var, d_fake: Var) -> Result<Var> {
    let ones = tape.constant(Tensor::full(tape.value(d_real).shape(), 1.0));
    let zeros = tape.constant(Tensor::zeros(tape.value(d_fake).shape()));
    let r = tape.mse_loss(d_real, ones)?;
    let f = tape.mse_loss(d_fake, zeros)?;
    Ok(tape.add(r, f)?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    pub step: usize,
    pub loss_g: f64,
    pub loss_g_l1: f64,
    pub loss_g_adv: f64,
    pub loss_d: f64,
    pub val_l1: Option<f64>,
}

pub const LOG_HEADER: [&str; 7] = ["epoch", "step", "loss_g", "loss_g_l1", "loss_g_adv", "loss_d", "val_l1"];

pub fn write_log(path: &Path, log: &[LogRow]) -> Result<()> {
    let rows: Vec<Vec<String>> = log
        .iter()
        .map(|r| {
            vec![
                r.epoch.to_string(),
                r.step.to_string(),
                csv_float(r.loss_g),
                csv_float(r.loss_g_l1),
                csv_float(r.loss_g_adv),
                csv_float(r.loss_d),
                r.val_l1.map(csv_float).unwrap_or_default(),
            ]
        })
        .collect();
    write_csv(path, &LOG_HEADER, &rows)
}

/// Fixed style-pool index per evaluation item, so L1 is comparable across epochs.
pub fn evaluation_styles(n: usize, pool: usize, seed: u64, cluster: usize) -> Vec<usize> {
    let mut rng = substream(seed, &format!("eval-style/{cluster}"));
    (0..n).map(|_| rng.gen_range(0..pool)).collect()
}

const EVAL_BATCH: usize = 8;

/// Mean absolute error of the generator over `pairs`, item `i` styled by `styles[i]`.
pub fn mean_l1(model: &GanModel, pairs: &[TrainingPair], styles: &[&StyleCode]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("no pairs to evaluate".into()));
    }
    let mut total = 0.0f64;
    let mut count = 0usize;
    for (chunk, st) in pairs.chunks(EVAL_BATCH).zip(styles.chunks(EVAL_BATCH)) {
        let contents: Vec<&RgbImage> = chunk.iter().map(|p| &p.content).collect();
        let out = model.translate_batch(&contents, st)?;
        for (o, p) in out.iter().zip(chunk) {
            total += o
                .data()
                .iter()
                .zip(p.target.data())
                .map(|(&a, &b)| (a - b).abs() as f64)
                .sum::<f64>();
            count += o.data().len();
        }
    }
    Ok(total / count as f64)
}

pub struct TrainOutcome {
    pub model: GanModel,
    pub log: Vec<LogRow>,
}

struct StepLosses {
    g: f64,
    l1: f64,
    adv: f64,
    d: f64,
}

fn grads_for(grads: &discgan_tensor::Gradients<f32>, vars: &[Var], params: &ParamSet) -> Vec<Tensor<f32>> {
    vars.iter()
        .zip(params.tensors())
        .map(|(&v, t)| grads.get_or_zeros(v, t.shape()))
        .collect()
}

/// One discriminator update followed by one generator update on a batch.
fn train_step(
    model: &mut GanModel,
    opt_g: &mut Adam<f32>,
    opt_d: &mut Adam<f32>,
    x: Tensor<f32>,
    y: Tensor<f32>,
    style: &StyleBatch,
    config: &TrainConfig,
) -> Result<StepLosses> {
    let mut tg = Tape::new();
    let g: Bound = model.generator.bind(&mut tg, true);
    let xv = tg.constant(x);
    let trace = generator_forward(&mut tg, &g, xv, style)?;
    let g_vars = g.vars;
    let fake = tg.value(trace.image).clone();

    let mut td = Tape::new();
    let d = model.discriminator.bind(&mut td, true);
    let real = td.constant(y.clone());
    let fk = td.constant(fake);
    let d_real = discriminator_forward(&mut td, &d, real)?;
    let d_fake = discriminator_forward(&mut td, &d, fk)?;
    let d_vars = d.vars;
    let ld = discriminator_loss(&mut td, d_real, d_fake)?;
    let loss_d = td.value(ld).item()? as f64;
    let grads = td.backward(ld)?;
    let gd = grads_for(&grads, &d_vars, &model.discriminator);
    opt_d.step(model.discriminator.tensors_mut(), &gd)?;

    let dc = model.discriminator.bind(&mut tg, false);
    let scores = discriminator_forward(&mut tg, &dc, trace.image)?;
    let yv = tg.constant(y);
    let (lg, l1, adv) = generator_loss(
        &mut tg,
        trace.image,
        yv,
        scores,
        config.lambda_rec as f32,
        config.lambda_adv as f32,
    )?;
    let losses = StepLosses {
        g: tg.value(lg).item()? as f64,
        l1: tg.value(l1).item()? as f64,
        adv: tg.value(adv).item()? as f64,
        d: loss_d,
    };
    let grads = tg.backward(lg)?;
    let gg = grads_for(&grads, &g_vars, &model.generator);
    opt_g.step(model.generator.tensors_mut(), &gg)?;
    Ok(losses)
}

/// Trains one cluster's generator/discriminator pair.
///
/// Style references are drawn from the training targets. When
/// `checkpoint_dir` is given, the initialization is saved as epoch 0 and
/// every finished epoch overwrites it; a non-finite loss or parameter aborts
/// with the previous epoch's checkpoint left in place.
pub fn train_cluster(
    train: &[TrainingPair],
    val: &[TrainingPair],
    config: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "cluster {} has {} training pairs; need at least 2",
            config.cluster,
            train.len()
        )));
    }
    let (w, h) = train[0].content.dims();
    check_divisible(w, h)?;
    for p in train.iter().chain(val) {
        if p.content.dims() != (w, h) || p.target.dims() != (w, h) {
            return Err(Error::Dimension(format!(
                "pair {} is not {w}x{h} throughout",
                p.id
            )));
        }
    }

    let mut model = GanModel::init(config);
    let pool: Vec<StyleCode> = train
        .iter()
        .map(|p| model.style_code(&p.target))
        .collect::<Result<_>>()?;
    let refs = |idx: &[usize]| -> Vec<&StyleCode> { idx.iter().map(|&i| &pool[i]).collect() };
    let val_styles = evaluation_styles(val.len(), pool.len(), config.seed, config.cluster);
    let val_refs = refs(&val_styles);

    if let Some(dir) = checkpoint_dir {
        claim_checkpoint_dir(dir, config.cluster)?;
        save_checkpoint(dir, &model, config, 0)?;
    }

    let mut opt_g = Adam::new(config.lr as f32, config.beta1 as f32, config.beta2 as f32);
    let mut opt_d = Adam::new(config.lr as f32, config.beta1 as f32, config.beta2 as f32);
    let mut order_rng = substream(config.seed, &format!("shuffle/{}", config.cluster));
    let mut style_rng = substream(config.seed, &format!("style-pick/{}", config.cluster));
    let mut log = Vec::new();
    let mut step = 0;
    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut order_rng);
        let mut sums = [0.0f64; 4];
        let mut batches = 0;
        for batch in order.chunks(config.batch_size) {
            let x = Tensor::stack(&batch.iter().map(|&i| train[i].content.to_tensor()).collect::<Vec<_>>())?;
            let y = Tensor::stack(&batch.iter().map(|&i| train[i].target.to_tensor()).collect::<Vec<_>>())?;
            let picks: Vec<usize> = batch.iter().map(|_| style_rng.gen_range(0..pool.len())).collect();
            let style = StyleBatch::from_codes(&refs(&picks))?;
            let l = train_step(&mut model, &mut opt_g, &mut opt_d, x, y, &style, config)?;
            step += 1;
            let finite = [l.g, l.l1, l.adv, l.d].iter().all(|v| v.is_finite());
            if !finite || !model.generator.is_finite() || !model.discriminator.is_finite() {
                return Err(Error::NonFinite {
                    epoch,
                    step,
                    last_good_epoch: epoch - 1,
                });
            }
            for (s, v) in sums.iter_mut().zip([l.g, l.l1, l.adv, l.d]) {
                *s += v;
            }
            batches += 1;
        }
        let n = batches as f64;
        let val_l1 = if val.is_empty() {
            None
        } else {
            Some(mean_l1(&model, val, &val_refs)?)
        };
        log.push(LogRow {
            epoch,
            step,
            loss_g: sums[0] / n,
            loss_g_l1: sums[1] / n,
            loss_g_adv: sums[2] / n,
            loss_d: sums[3] / n,
            val_l1,
        });
        if let Some(dir) = checkpoint_dir {
            save_checkpoint(dir, &model, config, epoch)?;
        }
    }
    Ok(TrainOutcome { model, log })
}

