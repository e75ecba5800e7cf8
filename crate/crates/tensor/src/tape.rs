//! Reverse-mode differentiation tape.
//!
//! Operations are appended in execution order and replayed backwards once.
//! A tape is single-use: [`Tape::backward`] consumes it.

use crate::error::{mismatch, Result, TensorError};
use crate::kernels::{self, AdainCache};
use crate::tensor::{Scalar, Shape, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddBias(Var, Var),
    Conv2d {
        x: Var,
        k: Var,
        stride: usize,
        pad: usize,
    },
    ConvTranspose2d {
        x: Var,
        k: Var,
        stride: usize,
        pad: usize,
    },
    LeakyRelu(Var, T),
    Sigmoid(Var),
    Adain(Var, AdainCache<T>),
    Sum(Var),
    Mean(Var),
    L1(Var, Var),
    Mse(Var, Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `var`, or zeros of `shape` when `var` did not reach the loss.
    pub fn get_or_zeros(&self, var: Var, shape: Shape) -> Tensor<T> {
        self.get(var).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

fn same_shape<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(mismatch(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn zip_map<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::new(a.shape(), data).expect("zip_map keeps shape")
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Records a constant input.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Records a trainable input whose gradient is wanted.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape("add", va, vb)?;
        let out = zip_map(va, vb, |x, y| x + y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape("sub", va, vb)?;
        let out = zip_map(va, vb, |x, y| x - y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape("mul", va, vb)?;
        let out = zip_map(va, vb, |x, y| x * y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Var {
        let out = self.value(a).map(|v| v * factor);
        let rg = self.rg(&[a]);
        self.push(out, Op::Scale(a, factor), rg)
    }

    /// Adds a `(1, C, 1, 1)` bias to every plane of an `(N, C, H, W)` input.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (vx, vb) = (self.value(x), self.value(bias));
        let [n, c, h, w] = vx.shape();
        if vb.shape() != [1, c, 1, 1] {
            return Err(mismatch(
                "add_bias",
                format!("bias {:?} for input {:?}", vb.shape(), vx.shape()),
            ));
        }
        let hw = h * w;
        let mut data = vx.data().to_vec();
        for (p, plane) in data.chunks_mut(hw.max(1)).take(n * c).enumerate() {
            let b = vb.data()[p % c];
            plane.iter_mut().for_each(|v| *v = *v + b);
        }
        let out = Tensor::new(vx.shape(), data)?;
        let rg = self.rg(&[x, bias]);
        Ok(self.push(out, Op::AddBias(x, bias), rg))
    }

    pub fn conv2d(&mut self, x: Var, k: Var, stride: usize, pad: usize) -> Result<Var> {
        let out = kernels::conv2d(self.value(x), self.value(k), stride, pad)?;
        let rg = self.rg(&[x, k]);
        Ok(self.push(out, Op::Conv2d { x, k, stride, pad }, rg))
    }

    pub fn conv2d_transpose(&mut self, x: Var, k: Var, stride: usize, pad: usize) -> Result<Var> {
        let out = kernels::conv2d_transpose(self.value(x), self.value(k), stride, pad)?;
        let rg = self.rg(&[x, k]);
        Ok(self.push(out, Op::ConvTranspose2d { x, k, stride, pad }, rg))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Var {
        let out = self
            .value(x)
            .map(|v| if v > T::zero() { v } else { v * slope });
        let rg = self.rg(&[x]);
        self.push(out, Op::LeakyRelu(x, slope), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.leaky_relu(x, T::zero())
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| T::one() / (T::one() + (-v).exp()));
        let rg = self.rg(&[x]);
        self.push(out, Op::Sigmoid(x), rg)
    }

    /// AdaIN against constant style statistics (one entry per channel, or per
    /// sample and channel).
    pub fn adain(&mut self, x: Var, style_mean: &[T], style_std: &[T]) -> Result<Var> {
        let (out, cache) = kernels::adain_raw(self.value(x), style_mean, style_std)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Adain(x, cache), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.data().iter().copied().sum::<T>() / T::from_usize(v.numel()).unwrap();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Mean(x), rg)
    }

    /// Mean absolute difference.
    pub fn l1_loss(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape("l1_loss", va, vb)?;
        let n = T::from_usize(va.numel()).unwrap();
        let s = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| (x - y).abs())
            .sum::<T>()
            / n;
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::scalar(s), Op::L1(a, b), rg))
    }

    /// Mean squared difference.
    pub fn mse_loss(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape("mse_loss", va, vb)?;
        let n = T::from_usize(va.numel()).unwrap();
        let s = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum::<T>()
            / n;
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::scalar(s), Op::Mse(a, b), rg))
    }

    /// Replays the tape in reverse from a scalar `loss`.
    pub fn backward(self, loss: Var) -> Result<Gradients<T>> {
        let shape = self.value(loss).shape();
        if self.value(loss).numel() != 1 {
            return Err(TensorError::NotScalar(shape));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(shape, T::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let g = match grads[idx].clone() {
                Some(g) => g,
                None => continue,
            };
            for (target, contribution) in self.vjp(node, &g)? {
                if !self.nodes[target.0].requires_grad {
                    continue;
                }
                let slot = &mut grads[target.0];
                *slot = Some(match slot.take() {
                    Some(existing) => zip_map(&existing, &contribution, |a, b| a + b),
                    None => contribution,
                });
            }
        }
        Ok(Gradients { grads })
    }

    fn vjp(&self, node: &Node<T>, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let rg = |v: Var| self.nodes[v.0].requires_grad;
        let mut out = Vec::with_capacity(2);
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                out.push((*a, g.clone()));
                out.push((*b, g.clone()));
            }
            Op::Sub(a, b) => {
                out.push((*a, g.clone()));
                out.push((*b, g.map(|v| -v)));
            }
            Op::Mul(a, b) => {
                if rg(*a) {
                    out.push((*a, zip_map(g, self.value(*b), |x, y| x * y)));
                }
                if rg(*b) {
                    out.push((*b, zip_map(g, self.value(*a), |x, y| x * y)));
                }
            }
            Op::Scale(a, f) => {
                let f = *f;
                out.push((*a, g.map(|v| v * f)));
            }
            Op::AddBias(x, bias) => {
                out.push((*x, g.clone()));
                if rg(*bias) {
                    let [n, c, h, w] = g.shape();
                    let hw = (h * w).max(1);
                    let mut db = vec![T::zero(); c];
                    for (p, plane) in g.data().chunks(hw).take(n * c).enumerate() {
                        db[p % c] = db[p % c] + plane.iter().copied().sum::<T>();
                    }
                    out.push((*bias, Tensor::new([1, c, 1, 1], db)?));
                }
            }
            Op::Conv2d { x, k, stride, pad } => {
                let (vx, vk) = (self.value(*x), self.value(*k));
                if rg(*x) {
                    let [_, _, h, w] = vx.shape();
                    let data = kernels::scatter_raw(
                        g.data(),
                        g.shape(),
                        vk.data(),
                        vk.shape(),
                        *stride,
                        *pad,
                        (h, w),
                    );
                    out.push((*x, Tensor::new(vx.shape(), data)?));
                }
                if rg(*k) {
                    let [_, _, kh, kw] = vk.shape();
                    let data = kernels::weight_grad_raw(
                        vx.data(),
                        vx.shape(),
                        g.data(),
                        g.shape(),
                        *stride,
                        *pad,
                        (kh, kw),
                    );
                    out.push((*k, Tensor::new(vk.shape(), data)?));
                }
            }
            Op::ConvTranspose2d { x, k, stride, pad } => {
                let (vx, vk) = (self.value(*x), self.value(*k));
                if rg(*x) {
                    let [_, _, h, w] = vx.shape();
                    let data = kernels::conv2d_raw(
                        g.data(),
                        g.shape(),
                        vk.data(),
                        vk.shape(),
                        *stride,
                        *pad,
                        (h, w),
                    );
                    out.push((*x, Tensor::new(vx.shape(), data)?));
                }
                if rg(*k) {
                    let [_, _, kh, kw] = vk.shape();
                    // Roles swap: the upstream gradient plays the conv input.
                    let data = kernels::weight_grad_raw(
                        g.data(),
                        g.shape(),
                        vx.data(),
                        vx.shape(),
                        *stride,
                        *pad,
                        (kh, kw),
                    );
                    out.push((*k, Tensor::new(vk.shape(), data)?));
                }
            }
            Op::LeakyRelu(x, slope) => {
                let slope = *slope;
                out.push((
                    *x,
                    zip_map(g, self.value(*x), |gv, xv| {
                        if xv > T::zero() {
                            gv
                        } else {
                            gv * slope
                        }
                    }),
                ));
            }
            Op::Sigmoid(x) => {
                out.push((
                    *x,
                    zip_map(g, &node.value, |gv, y| gv * y * (T::one() - y)),
                ));
            }
            Op::Adain(x, cache) => {
                let [n, c, h, w] = g.shape();
                let hw = h * w;
                let count = T::from_usize(hw).unwrap();
                let mut dx = vec![T::zero(); g.numel()];
                for p in 0..n * c {
                    let gain = cache.gain[p];
                    if gain == T::zero() {
                        continue;
                    }
                    let gp = &g.data()[p * hw..(p + 1) * hw];
                    let xh = &cache.xhat[p * hw..(p + 1) * hw];
                    let mean_g = gp.iter().copied().sum::<T>() / count;
                    let mean_gx = gp.iter().zip(xh).map(|(&a, &b)| a * b).sum::<T>() / count;
                    for ((d, &gv), &xv) in dx[p * hw..(p + 1) * hw].iter_mut().zip(gp).zip(xh) {
                        *d = gain * (gv - mean_g - xv * mean_gx);
                    }
                }
                out.push((*x, Tensor::new(g.shape(), dx)?));
            }
            Op::Sum(x) => {
                let gv = g.item()?;
                out.push((*x, Tensor::full(self.value(*x).shape(), gv)));
            }
            Op::Mean(x) => {
                let v = self.value(*x);
                let gv = g.item()? / T::from_usize(v.numel()).unwrap();
                out.push((*x, Tensor::full(v.shape(), gv)));
            }
            Op::L1(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let scale = g.item()? / T::from_usize(va.numel()).unwrap();
                let da = zip_map(va, vb, |x, y| {
                    let d = x - y;
                    if d > T::zero() {
                        scale
                    } else if d < T::zero() {
                        -scale
                    } else {
                        T::zero()
                    }
                });
                if rg(*b) {
                    out.push((*b, da.map(|v| -v)));
                }
                out.push((*a, da));
            }
            Op::Mse(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let scale = T::lit(2.0) * g.item()? / T::from_usize(va.numel()).unwrap();
                let da = zip_map(va, vb, |x, y| scale * (x - y));
                if rg(*b) {
                    out.push((*b, da.map(|v| -v)));
                }
                out.push((*a, da));
            }
        }
        Ok(out)
    }
}
