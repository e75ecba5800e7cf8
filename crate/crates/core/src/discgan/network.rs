//! Content encoder, frozen style bank, AdaIN decoder and patch discriminator.
//!
//! With base width `b` and an `H x W` input:
//!
//! | stage            | layers                                   | output           |
//! |------------------|------------------------------------------|------------------|
//! | content encoder  | conv3 s1, conv4 s2, conv4 s2 (LReLU)     | `4b x H/4 x W/4` |
//! | decoder          | 2 AdaIN residual blocks, 2 deconv4 s2    | `b x H x W`      |
//! | output           | conv3 s1 + sigmoid                       | `3 x H x W`      |
//! | style bank       | unpadded conv3 s1, conv4 s2, conv4 s2    | 3 scales of `4b` |
//! | discriminator    | conv4 s2, conv4 s2, conv4 s1             | score map        |

use discgan_tensor::{instance_stats, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use super::params::{he_normal, Bound, ParamSet};
use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::rng::Rng;

pub const LRELU_SLOPE: f32 = 0.2;

/// Style-bank scale feeding each residual block's AdaIN.
pub const INJECT_SCALES: [usize; 2] = [2, 1];

pub const BANK_SCALES: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub base_channels: usize,
}

impl Architecture {
    pub fn new(base_channels: usize) -> Result<Self> {
        if base_channels == 0 {
            return Err(Error::InvalidArgument("base_channels must be positive".into()));
        }
        Ok(Self { base_channels })
    }

    /// Channels of the content code, the residual blocks and every bank scale.
    pub fn code_channels(&self) -> usize {
        4 * self.base_channels
    }
}

struct ConvSpec {
    name: &'static str,
    cin: usize,
    cout: usize,
    k: usize,
    transpose: bool,
    gain: f64,
}

fn init_layers(specs: &[ConvSpec], rng: &mut Rng) -> ParamSet {
    let mut p = ParamSet::new();
    for s in specs {
        let (shape, fan_in) = if s.transpose {
            // each output pixel sees about a quarter of the kernel at stride 2
            ([s.cin, s.cout, s.k, s.k], s.cin * s.k * s.k / 4)
        } else {
            ([s.cout, s.cin, s.k, s.k], s.cin * s.k * s.k)
        };
        p.push(format!("{}.w", s.name), he_normal(shape, fan_in, s.gain, rng));
        p.push(format!("{}.b", s.name), Tensor::zeros([1, s.cout, 1, 1]));
    }
    p
}

fn conv(name: &'static str, cin: usize, cout: usize, k: usize) -> ConvSpec {
    ConvSpec {
        name,
        cin,
        cout,
        k,
        transpose: false,
        gain: 1.0,
    }
}

pub fn init_generator(arch: Architecture, rng: &mut Rng) -> ParamSet {
    let b = arch.base_channels;
    let c = arch.code_channels();
    let mut specs = vec![
        conv("enc.0", 3, b, 3),
        conv("enc.1", b, 2 * b, 4),
        conv("enc.2", 2 * b, c, 4),
        conv("res.0.a", c, c, 3),
        conv("res.0.b", c, c, 3),
        conv("res.1.a", c, c, 3),
        conv("res.1.b", c, c, 3),
        ConvSpec {
            transpose: true,
            ..conv("up.0", c, 2 * b, 4)
        },
        ConvSpec {
            transpose: true,
            ..conv("up.1", 2 * b, b, 4)
        },
        conv("out", b, 3, 3),
    ];
    // keep residual branches and the output layer small at initialization
    for s in specs.iter_mut() {
        if s.name.ends_with(".b") && s.name.starts_with("res") || s.name == "out" {
            s.gain = 0.5;
        }
    }
    init_layers(&specs, rng)
}

pub fn init_discriminator(arch: Architecture, rng: &mut Rng) -> ParamSet {
    let b = arch.base_channels;
    init_layers(
        &[
            conv("disc.0", 3, b, 4),
            conv("disc.1", b, 2 * b, 4),
            ConvSpec {
                gain: 0.5,
                ..conv("disc.2", 2 * b, 1, 4)
            },
        ],
        rng,
    )
}

fn conv_layer(tape: &mut Tape<f32>, p: &Bound, name: &str, x: Var, stride: usize, pad: usize) -> Result<Var> {
    let y = tape.conv2d(x, p.get(&format!("{name}.w")), stride, pad)?;
    Ok(tape.add_bias(y, p.get(&format!("{name}.b")))?)
}

fn deconv_layer(tape: &mut Tape<f32>, p: &Bound, name: &str, x: Var) -> Result<Var> {
    let y = tape.conv2d_transpose(x, p.get(&format!("{name}.w")), 2, 1)?;
    Ok(tape.add_bias(y, p.get(&format!("{name}.b")))?)
}

pub fn check_divisible(width: usize, height: usize) -> Result<()> {
    if width % 4 != 0 || height % 4 != 0 || width == 0 || height == 0 {
        return Err(Error::Dimension(format!(
            "image {width}x{height} must have both sides divisible by 4"
        )));
    }
    Ok(())
}

/// Content encoder on a `(N, 3, H, W)` batch.
pub fn content_forward(tape: &mut Tape<f32>, g: &Bound, x: Var) -> Result<Var> {
    let [_, _, h, w] = tape.value(x).shape();
    check_divisible(w, h)?;
    let mut y = x;
    for (name, stride, pad) in [("enc.0", 1, 1), ("enc.1", 2, 1), ("enc.2", 2, 1)] {
        y = conv_layer(tape, g, name, y, stride, pad)?;
        y = tape.leaky_relu(y, LRELU_SLOPE);
    }
    Ok(y)
}

/// Style statistics for a batch: per injection point, sample-major
/// `N * C` means and stds.
#[derive(Clone, Debug, PartialEq)]
pub struct StyleBatch {
    pub mean: [Vec<f32>; 2],
    pub std: [Vec<f32>; 2],
}

impl StyleBatch {
    pub fn from_codes(codes: &[&StyleCode]) -> Result<Self> {
        if let Some(c) = codes.iter().find(|c| c.scales.len() != BANK_SCALES) {
            return Err(Error::Dimension(format!(
                "style code has {} scales, expected {BANK_SCALES}",
                c.scales.len()
            )));
        }
        let pick = |i: usize, f: fn(&ScaleStats) -> &Vec<f32>| -> Vec<f32> {
            codes
                .iter()
                .flat_map(|c| f(&c.scales[INJECT_SCALES[i]]).iter().copied())
                .collect()
        };
        Ok(Self {
            mean: [pick(0, |s| &s.mean), pick(1, |s| &s.mean)],
            std: [pick(0, |s| &s.std), pick(1, |s| &s.std)],
        })
    }
}

pub struct DecoderTrace {
    pub image: Var,
    /// Post-AdaIN activations of each residual block.
    pub injected: [Var; 2],
}

pub fn decoder_forward(tape: &mut Tape<f32>, g: &Bound, code: Var, style: &StyleBatch) -> Result<DecoderTrace> {
    let mut y = code;
    let mut injected = [code; 2];
    for i in 0..2 {
        let a = tape.adain(y, &style.mean[i], &style.std[i])?;
        injected[i] = a;
        let h = conv_layer(tape, g, &format!("res.{i}.a"), a, 1, 1)?;
        let h = tape.leaky_relu(h, LRELU_SLOPE);
        let h = conv_layer(tape, g, &format!("res.{i}.b"), h, 1, 1)?;
        y = tape.add(a, h)?;
    }
    for name in ["up.0", "up.1"] {
        y = deconv_layer(tape, g, name, y)?;
        y = tape.leaky_relu(y, LRELU_SLOPE);
    }
    let y = conv_layer(tape, g, "out", y, 1, 1)?;
    Ok(DecoderTrace {
        image: tape.sigmoid(y),
        injected,
    })
}

pub struct GeneratorTrace {
    pub code: Var,
    pub image: Var,
    pub injected: [Var; 2],
}

pub fn generator_forward(tape: &mut Tape<f32>, g: &Bound, x: Var, style: &StyleBatch) -> Result<GeneratorTrace> {
    let code = content_forward(tape, g, x)?;
    let d = decoder_forward(tape, g, code, style)?;
    Ok(GeneratorTrace {
        code,
        image: d.image,
        injected: d.injected,
    })
}

/// Patch scores for a `(N, 3, H, W)` batch: `(N, 1, H/4 - 1, W/4 - 1)`.
pub fn discriminator_forward(tape: &mut Tape<f32>, d: &Bound, x: Var) -> Result<Var> {
    let y = conv_layer(tape, d, "disc.0", x, 2, 1)?;
    let y = tape.leaky_relu(y, LRELU_SLOPE);
    let y = conv_layer(tape, d, "disc.1", y, 2, 1)?;
    let y = tape.leaky_relu(y, LRELU_SLOPE);
    conv_layer(tape, d, "disc.2", y, 1, 1)
}

/// Receptive field of one discriminator score, in input pixels.
pub const DISC_RECEPTIVE_FIELD: usize = 22;

/// Frozen, seeded three-scale feature extractor for style statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct StyleBank {
    params: ParamSet,
}

// Unpadded, so a constant image yields exactly constant feature maps.
const BANK_LAYERS: [(&str, usize, usize); 3] = [("bank.0", 1, 0), ("bank.1", 2, 0), ("bank.2", 2, 0)];

impl StyleBank {
    pub fn new(arch: Architecture, rng: &mut Rng) -> Self {
        let c = arch.code_channels();
        let params = init_layers(
            &[conv("bank.0", 3, c, 3), conv("bank.1", c, c, 4), conv("bank.2", c, c, 4)],
            rng,
        );
        Self { params }
    }

    pub fn from_params(params: ParamSet) -> Result<Self> {
        for (name, _, _) in BANK_LAYERS {
            params.get(&format!("{name}.w"))?;
            params.get(&format!("{name}.b"))?;
        }
        Ok(Self { params })
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn channels(&self) -> usize {
        self.params.get("bank.0.w").map_or(0, |w| w.shape()[0])
    }

    /// ReLU feature maps at the three scales.
    pub fn features(&self, x: &Tensor<f32>) -> Result<Vec<Tensor<f32>>> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let mut y = tape.constant(x.clone());
        let mut out = Vec::with_capacity(BANK_SCALES);
        for (name, stride, pad) in BANK_LAYERS {
            y = conv_layer(&mut tape, &p, name, y, stride, pad)?;
            y = tape.relu(y);
            out.push(tape.value(y).clone());
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleStats {
    pub mean: Vec<f32>,
    /// Regularized standard deviation, as produced by `instance_stats`.
    pub std: Vec<f32>,
    /// Population variance before regularization.
    pub var: Vec<f32>,
    /// Row-major `C x C` Gram matrix.
    pub gram: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StyleCode {
    pub scales: Vec<ScaleStats>,
}

impl StyleCode {
    /// Squared distance between the Gram matrices of two codes, summed over scales.
    pub fn gram_distance(&self, other: &StyleCode) -> f64 {
        self.scales
            .iter()
            .zip(&other.scales)
            .flat_map(|(a, b)| a.gram.iter().zip(&b.gram))
            .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
            .sum()
    }
}

/// `(F Fᵀ) / (H W) / C` for the first sample of `features`, where `F` is the
/// `C x HW` matrix of flattened channels.
pub fn gram_matrix(features: &Tensor<f32>) -> Vec<f32> {
    let [_, c, h, w] = features.shape();
    let hw = h * w;
    let data = features.data();
    let mut g = vec![0.0f32; c * c];
    for i in 0..c {
        for j in i..c {
            let (fi, fj) = (&data[i * hw..(i + 1) * hw], &data[j * hw..(j + 1) * hw]);
            let dot: f64 = fi.iter().zip(fj).map(|(&a, &b)| a as f64 * b as f64).sum();
            let v = (dot / hw as f64 / c as f64) as f32;
            g[i * c + j] = v;
            g[j * c + i] = v;
        }
    }
    g
}

pub fn encode_style(img: &RgbImage, bank: &StyleBank) -> Result<StyleCode> {
    let scales = bank
        .features(&img.to_tensor())?
        .iter()
        .map(|f| {
            let s = instance_stats(f);
            ScaleStats {
                mean: s.mean,
                std: s.std,
                var: s.var,
                gram: gram_matrix(f),
            }
        })
        .collect();
    Ok(StyleCode { scales })
}

/// Content code `(1, 4b, H/4, W/4)` of one image.
pub fn encode_content(img: &RgbImage, generator: &ParamSet) -> Result<Tensor<f32>> {
    let mut tape = Tape::new();
    let g = generator.bind(&mut tape, false);
    let x = tape.constant(img.to_tensor());
    let code = content_forward(&mut tape, &g, x)?;
    Ok(tape.value(code).clone())
}

/// Decodes a content code under one style.
pub fn generate(code: &Tensor<f32>, style: &StyleCode, generator: &ParamSet) -> Result<RgbImage> {
    let mut tape = Tape::new();
    let g = generator.bind(&mut tape, false);
    let z = tape.constant(code.clone());
    let d = decoder_forward(&mut tape, &g, z, &StyleBatch::from_codes(&[style])?)?;
    RgbImage::from_tensor(tape.value(d.image), 0)
}

pub fn discriminate(img: &RgbImage, disc: &ParamSet) -> Result<Tensor<f32>> {
    let mut tape = Tape::new();
    let d = disc.bind(&mut tape, false);
    let x = tape.constant(img.to_tensor());
    let s = discriminator_forward(&mut tape, &d, x)?;
    Ok(tape.value(s).clone())
}
