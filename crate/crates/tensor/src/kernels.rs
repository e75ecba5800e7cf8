//! Forward and adjoint convolution kernels plus instance statistics.
//!
//! Kernels follow the usual NCHW conventions: a convolution kernel is laid out
//! `(out, in, kh, kw)` and a transposed-convolution kernel `(in, out, kh, kw)`,
//! so the same tensor serves as a convolution and as its adjoint.
//!
//! Every output plane is computed by one sequential loop in a fixed order, so
//! results do not depend on how rayon splits the work.

use rayon::prelude::*;

use crate::error::{invalid, mismatch, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// Variance regularizer used by [`instance_stats`].
pub const INSTANCE_EPS: f64 = 1e-5;

fn conv_out_len(len: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = len + 2 * pad;
    if padded < k || stride == 0 {
        None
    } else {
        Some((padded - k) / stride + 1)
    }
}

/// Half-open range of output columns `o` with `o * stride + k - pad` inside `[0, len)`.
#[inline]
fn valid_range(k: usize, pad: usize, stride: usize, len: usize, out_len: usize) -> (usize, usize) {
    let (k, pad, stride, len) = (k as isize, pad as isize, stride as isize, len as isize);
    let lo = if pad > k {
        (pad - k + stride - 1) / stride
    } else {
        0
    };
    let hi_num = len - 1 + pad - k;
    let hi = if hi_num < 0 { 0 } else { hi_num / stride + 1 };
    let hi = hi.min(out_len as isize);
    let lo = lo.min(hi);
    (lo as usize, hi as usize)
}

pub(crate) fn conv2d_raw<T: Scalar>(
    x: &[T],
    xs: Shape,
    k: &[T],
    ks: Shape,
    stride: usize,
    pad: usize,
    out_hw: (usize, usize),
) -> Vec<T> {
    let [n, ci, h, w] = xs;
    let [co, _, kh, kw] = ks;
    let (ho, wo) = out_hw;
    let mut out = vec![T::zero(); n * co * ho * wo];
    if ho * wo == 0 {
        return out;
    }
    out.par_chunks_mut(ho * wo)
        .enumerate()
        .for_each(|(idx, plane)| {
            let (b, o) = (idx / co, idx % co);
            for i in 0..ci {
                let xplane = &x[(b * ci + i) * h * w..][..h * w];
                for ky in 0..kh {
                    let (oy_lo, oy_hi) = valid_range(ky, pad, stride, h, ho);
                    for kx in 0..kw {
                        let wv = k[((o * ci + i) * kh + ky) * kw + kx];
                        if wv == T::zero() {
                            continue;
                        }
                        let (ox_lo, ox_hi) = valid_range(kx, pad, stride, w, wo);
                        for oy in oy_lo..oy_hi {
                            let iy = oy * stride + ky - pad;
                            let xrow = &xplane[iy * w..(iy + 1) * w];
                            let orow = &mut plane[oy * wo..(oy + 1) * wo];
                            for ox in ox_lo..ox_hi {
                                orow[ox] = orow[ox] + wv * xrow[ox * stride + kx - pad];
                            }
                        }
                    }
                }
            }
        });
    out
}

/// Scatter used by transposed convolution and by the input-gradient of conv2d.
///
/// `out[n, b, y*s + ky - p, x*s + kx - p] += inp[n, a, y, x] * k[a, b, ky, kx]`
pub(crate) fn scatter_raw<T: Scalar>(
    inp: &[T],
    is: Shape,
    k: &[T],
    ks: Shape,
    stride: usize,
    pad: usize,
    out_hw: (usize, usize),
) -> Vec<T> {
    let [n, a_ch, h, w] = is;
    let [_, b_ch, kh, kw] = ks;
    let (oh, ow) = out_hw;
    let mut out = vec![T::zero(); n * b_ch * oh * ow];
    if oh * ow == 0 {
        return out;
    }
    out.par_chunks_mut(oh * ow)
        .enumerate()
        .for_each(|(idx, plane)| {
            let (bn, b) = (idx / b_ch, idx % b_ch);
            for a in 0..a_ch {
                let iplane = &inp[(bn * a_ch + a) * h * w..][..h * w];
                for ky in 0..kh {
                    // rows y with 0 <= y*s + ky - p < oh
                    let (y_lo, y_hi) = valid_range(ky, pad, stride, oh, h);
                    for kx in 0..kw {
                        let wv = k[((a * b_ch + b) * kh + ky) * kw + kx];
                        if wv == T::zero() {
                            continue;
                        }
                        let (x_lo, x_hi) = valid_range(kx, pad, stride, ow, w);
                        for y in y_lo..y_hi {
                            let oy = y * stride + ky - pad;
                            let irow = &iplane[y * w..(y + 1) * w];
                            let orow = &mut plane[oy * ow..(oy + 1) * ow];
                            for x in x_lo..x_hi {
                                let ox = x * stride + kx - pad;
                                orow[ox] = orow[ox] + wv * irow[x];
                            }
                        }
                    }
                }
            }
        });
    out
}

/// Kernel gradient of conv2d: `g[o, i, ky, kx] = sum gout[n,o,y,x] * inp[n,i,y*s+ky-p,x*s+kx-p]`.
pub(crate) fn weight_grad_raw<T: Scalar>(
    inp: &[T],
    is: Shape,
    gout: &[T],
    gs: Shape,
    stride: usize,
    pad: usize,
    khw: (usize, usize),
) -> Vec<T> {
    let [n, ci, h, w] = is;
    let [_, co, ho, wo] = gs;
    let (kh, kw) = khw;
    let mut out = vec![T::zero(); co * ci * kh * kw];
    out.par_chunks_mut(kh * kw)
        .enumerate()
        .for_each(|(idx, taps)| {
            let (o, i) = (idx / ci, idx % ci);
            for ky in 0..kh {
                let (oy_lo, oy_hi) = valid_range(ky, pad, stride, h, ho);
                for kx in 0..kw {
                    let (ox_lo, ox_hi) = valid_range(kx, pad, stride, w, wo);
                    let mut acc = T::zero();
                    for b in 0..n {
                        let gplane = &gout[(b * co + o) * ho * wo..][..ho * wo];
                        let iplane = &inp[(b * ci + i) * h * w..][..h * w];
                        for oy in oy_lo..oy_hi {
                            let iy = oy * stride + ky - pad;
                            let grow = &gplane[oy * wo..(oy + 1) * wo];
                            let irow = &iplane[iy * w..(iy + 1) * w];
                            for ox in ox_lo..ox_hi {
                                acc = acc + grow[ox] * irow[ox * stride + kx - pad];
                            }
                        }
                    }
                    taps[ky * kw + kx] = acc;
                }
            }
        });
    out
}

pub(crate) fn conv2d_shape(xs: Shape, ks: Shape, stride: usize, pad: usize) -> Result<Shape> {
    let [n, ci, h, w] = xs;
    let [co, kci, kh, kw] = ks;
    if stride == 0 {
        return Err(invalid("conv2d", "stride must be >= 1"));
    }
    if kci != ci {
        return Err(mismatch(
            "conv2d",
            format!("input {xs:?} has {ci} channels but kernel {ks:?} expects {kci}"),
        ));
    }
    let ho = conv_out_len(h, kh, stride, pad);
    let wo = conv_out_len(w, kw, stride, pad);
    match (ho, wo) {
        (Some(ho), Some(wo)) => Ok([n, co, ho, wo]),
        _ => Err(mismatch(
            "conv2d",
            format!("kernel {kh}x{kw} larger than padded input {h}x{w} (pad {pad})"),
        )),
    }
}

pub(crate) fn conv_transpose_shape(
    xs: Shape,
    ks: Shape,
    stride: usize,
    pad: usize,
) -> Result<Shape> {
    let [n, ci, h, w] = xs;
    let [kci, co, kh, kw] = ks;
    if stride == 0 {
        return Err(invalid("conv2d_transpose", "stride must be >= 1"));
    }
    if kci != ci {
        return Err(mismatch(
            "conv2d_transpose",
            format!("input {xs:?} has {ci} channels but kernel {ks:?} expects {kci}"),
        ));
    }
    if h == 0 || w == 0 {
        return Err(mismatch("conv2d_transpose", "empty spatial input"));
    }
    let full_h = (h - 1) * stride + kh;
    let full_w = (w - 1) * stride + kw;
    if full_h < 2 * pad + 1 || full_w < 2 * pad + 1 {
        return Err(mismatch(
            "conv2d_transpose",
            format!("padding {pad} leaves no output for input {h}x{w}"),
        ));
    }
    Ok([n, co, full_h - 2 * pad, full_w - 2 * pad])
}

/// Plain 2-D cross-correlation (no bias).
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let os = conv2d_shape(input.shape(), kernel.shape(), stride, pad)?;
    let data = conv2d_raw(
        input.data(),
        input.shape(),
        kernel.data(),
        kernel.shape(),
        stride,
        pad,
        (os[2], os[3]),
    );
    Tensor::new(os, data)
}

/// Transposed convolution, the adjoint of [`conv2d`] with the same kernel tensor.
pub fn conv2d_transpose<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let os = conv_transpose_shape(input.shape(), kernel.shape(), stride, pad)?;
    let data = scatter_raw(
        input.data(),
        input.shape(),
        kernel.data(),
        kernel.shape(),
        stride,
        pad,
        (os[2], os[3]),
    );
    Tensor::new(os, data)
}

/// Per-(sample, channel) statistics over the spatial axes.
#[derive(Clone, Debug, PartialEq)]
pub struct InstanceStats<T> {
    pub batch: usize,
    pub channels: usize,
    /// `batch * channels` means, sample-major.
    pub mean: Vec<T>,
    /// `sqrt(population variance + INSTANCE_EPS)`, same layout as `mean`.
    pub std: Vec<T>,
    /// Population variance without the regularizer.
    pub var: Vec<T>,
}

pub fn instance_stats<T: Scalar>(x: &Tensor<T>) -> InstanceStats<T> {
    let [n, c, h, w] = x.shape();
    let hw = h * w;
    let eps = T::lit(INSTANCE_EPS);
    let count = T::from_usize(hw.max(1)).unwrap();
    let mut mean = Vec::with_capacity(n * c);
    let mut var = Vec::with_capacity(n * c);
    for plane in x.data().chunks(hw.max(1)).take(n * c) {
        let m = plane.iter().copied().sum::<T>() / count;
        let v = plane.iter().map(|&v| (v - m) * (v - m)).sum::<T>() / count;
        mean.push(m);
        var.push(v);
    }
    let std = var.iter().map(|&v| (v + eps).sqrt()).collect();
    InstanceStats {
        batch: n,
        channels: c,
        mean,
        std,
        var,
    }
}

/// Expands per-channel style vectors to one entry per (sample, channel).
pub(crate) fn broadcast_style<T: Scalar>(
    values: &[T],
    n: usize,
    c: usize,
    what: &str,
) -> Result<Vec<T>> {
    if values.len() == n * c {
        Ok(values.to_vec())
    } else if values.len() == c {
        Ok((0..n).flat_map(|_| values.iter().copied()).collect())
    } else {
        Err(mismatch(
            "adain",
            format!(
                "{what} has {} entries, expected {c} or {} for {n}x{c} features",
                values.len(),
                n * c
            ),
        ))
    }
}

/// Saved per-plane state for the AdaIN backward pass.
#[derive(Clone, Debug)]
pub(crate) struct AdainCache<T> {
    /// Multiplier applied to the centred input, per plane.
    pub gain: Vec<T>,
    /// Normalized input `(x - mean) / sigma`, zero on constant planes.
    pub xhat: Vec<T>,
}

/// AdaIN in the regularized-statistics convention: the output's
/// `sqrt(var + eps)` equals `style_std`, its mean equals `style_mean`.
pub(crate) fn adain_raw<T: Scalar>(
    x: &Tensor<T>,
    style_mean: &[T],
    style_std: &[T],
) -> Result<(Tensor<T>, AdainCache<T>)> {
    let [n, c, h, w] = x.shape();
    if style_std.iter().any(|&s| s < T::zero() || !s.is_finite()) {
        return Err(invalid("adain", "style std must be finite and non-negative"));
    }
    let means = broadcast_style(style_mean, n, c, "style mean")?;
    let stds = broadcast_style(style_std, n, c, "style std")?;
    let hw = h * w;
    if hw == 0 {
        return Err(invalid("adain", "empty spatial extent"));
    }
    let stats = instance_stats(x);
    let eps = T::lit(INSTANCE_EPS);
    let mut out = vec![T::zero(); x.numel()];
    let mut xhat = vec![T::zero(); x.numel()];
    let mut gain = vec![T::zero(); n * c];
    for p in 0..n * c {
        let target_var = (stds[p] * stds[p] - eps).max(T::zero());
        let var = stats.var[p];
        let src = &x.data()[p * hw..(p + 1) * hw];
        let dst = &mut out[p * hw..(p + 1) * hw];
        let xh = &mut xhat[p * hw..(p + 1) * hw];
        // Rounding leaves ~ulp-sized variance on constant planes.
        let m = stats.mean[p].abs().max(T::one());
        let floor = T::epsilon() * T::epsilon() * m * m * T::lit(16.0);
        if var > floor {
            let sigma = var.sqrt();
            let g = target_var.sqrt() / sigma;
            gain[p] = g;
            for ((d, e), &v) in dst.iter_mut().zip(xh.iter_mut()).zip(src) {
                let centred = v - stats.mean[p];
                *e = centred / sigma;
                *d = means[p] + g * centred;
            }
        } else {
            dst.iter_mut().for_each(|d| *d = means[p]);
        }
    }
    Ok((Tensor::new(x.shape(), out)?, AdainCache { gain, xhat }))
}

/// Adaptive instance normalization of `content` to the given per-channel statistics.
///
/// Statistics use the same convention as [`instance_stats`], so
/// `adain(x, stats(x)) == x` and the output's stats equal the targets.
pub fn adain<T: Scalar>(
    content: &Tensor<T>,
    style_mean: &[T],
    style_std: &[T],
) -> Result<Tensor<T>> {
    adain_raw(content, style_mean, style_std).map(|(t, _)| t)
}
