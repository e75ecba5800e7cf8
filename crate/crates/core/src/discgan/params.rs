use discgan_tensor::{Shape, Tape, Tensor, Var};
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Named parameter tensors in a fixed order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor<f32>>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor<f32>) {
        self.names.push(name.into());
        self.tensors.push(t);
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<f32>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<f32>] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<f32>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
            .ok_or_else(|| Error::InvalidArgument(format!("no parameter named {name:?}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<f32>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    /// Same names and shapes, all values mapped through `f`.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| t.map(&f)).collect(),
        }
    }

    /// Puts every tensor on `tape`, trainable or not.
    pub fn bind(&self, tape: &mut Tape<f32>, trainable: bool) -> Bound<'_> {
        let vars = self
            .tensors
            .iter()
            .map(|t| {
                if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        Bound { names: &self.names, vars }
    }
}

/// Tape handles of a bound [`ParamSet`].
pub struct Bound<'a> {
    names: &'a [String],
    pub vars: Vec<Var>,
}

impl Bound<'_> {
    pub fn get(&self, name: &str) -> Var {
        let i = self
            .names
            .iter()
            .position(|n| n == name)
            .unwrap_or_else(|| panic!("parameter {name:?} not bound"));
        self.vars[i]
    }
}

/// He-normal weights for a layer with `fan_in` inputs per output.
pub(crate) fn he_normal(shape: Shape, fan_in: usize, gain: f64, rng: &mut Rng) -> Tensor<f32> {
    let std = gain * (2.0 / fan_in as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("positive std");
    let mut t = Tensor::zeros(shape);
    t.data_mut()
        .iter_mut()
        .for_each(|v| *v = dist.sample(rng) as f32);
    t
}
