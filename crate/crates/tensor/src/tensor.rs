use std::fmt::Debug;
use std::iter::Sum;
use std::sync::Arc;

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Result, TensorError};

/// Floating-point element type. Training runs in `f32`, gradient checks in `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Default + Debug + Send + Sync + 'static
{
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("scalar literal out of range")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// `(batch, channels, height, width)`.
pub type Shape = [usize; 4];

pub fn numel(shape: &Shape) -> usize {
    shape.iter().product()
}

/// Immutable dense tensor in NCHW row-major layout.
///
/// Storage is reference counted, so cloning a tensor to put it on a tape is cheap.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Arc<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Shape, data: Vec<T>) -> Result<Self> {
        let expected = numel(&shape);
        if data.len() != expected {
            return Err(TensorError::DataLength {
                shape,
                len: data.len(),
                expected,
            });
        }
        Ok(Self {
            shape,
            data: Arc::new(data),
        })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: Shape, value: T) -> Self {
        Self {
            shape,
            data: Arc::new(vec![value; numel(&shape)]),
        }
    }

    pub fn scalar(value: T) -> Self {
        Self::full([1, 1, 1, 1], value)
    }

    /// Builds a tensor by evaluating `f(n, c, h, w)` for every index.
    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let [n, c, h, w] = shape;
        let mut data = Vec::with_capacity(numel(&shape));
        for b in 0..n {
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        data.push(f(b, ch, y, x));
                    }
                }
            }
        }
        Self {
            shape,
            data: Arc::new(data),
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        Arc::try_unwrap(self.data).unwrap_or_else(|shared| (*shared).clone())
    }

    /// Mutable access to the storage, copying it first if shared.
    pub fn data_mut(&mut self) -> &mut [T] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    pub fn get(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        let [_, cs, hs, ws] = self.shape;
        self.data[((n * cs + c) * hs + h) * ws + w]
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.numel() != 1 {
            return Err(TensorError::NotScalar(self.shape));
        }
        Ok(self.data[0])
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape,
            data: Arc::new(self.data.iter().map(|&v| f(v)).collect()),
        }
    }

    pub fn reshape(&self, shape: Shape) -> Result<Self> {
        if numel(&shape) != self.numel() {
            return Err(TensorError::DataLength {
                shape,
                len: self.numel(),
                expected: numel(&shape),
            });
        }
        Ok(Self {
            shape,
            data: Arc::clone(&self.data),
        })
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: Arc::new(
                self.data
                    .iter()
                    .map(|v| U::from_f64(v.to_f64().unwrap_or(f64::NAN)).unwrap_or(U::nan()))
                    .collect(),
            ),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Inner product over all elements.
    pub fn dot(&self, other: &Self) -> Result<T> {
        if self.shape != other.shape {
            return Err(crate::error::mismatch(
                "dot",
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        Ok(self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| a * b)
            .sum())
    }

    /// Returns sample `n` as a `(1, C, H, W)` tensor.
    pub fn sample(&self, n: usize) -> Self {
        let [_, c, h, w] = self.shape;
        let len = c * h * w;
        Self {
            shape: [1, c, h, w],
            data: Arc::new(self.data[n * len..(n + 1) * len].to_vec()),
        }
    }

    /// Concatenates tensors along the batch axis.
    pub fn stack(items: &[Self]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| crate::error::invalid("stack", "no tensors given"))?;
        let [_, c, h, w] = first.shape;
        let mut data = Vec::new();
        let mut n = 0;
        for t in items {
            let [tn, tc, th, tw] = t.shape;
            if (tc, th, tw) != (c, h, w) {
                return Err(crate::error::mismatch(
                    "stack",
                    format!("{:?} vs {:?}", first.shape, t.shape),
                ));
            }
            n += tn;
            data.extend_from_slice(&t.data);
        }
        Self::new([n, c, h, w], data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_wrong_length() {
        let err = Tensor::<f64>::new([1, 1, 2, 2], vec![0.0; 3]).unwrap_err();
        assert!(matches!(err, TensorError::DataLength { expected: 4, .. }));
    }

    #[test]
    fn from_fn_is_row_major() {
        let t = Tensor::<f64>::from_fn([1, 2, 2, 3], |_, c, y, x| (c * 100 + y * 10 + x) as f64);
        assert_eq!(t.data()[0..4], [0.0, 1.0, 2.0, 10.0]);
        assert_eq!(t.get(0, 1, 1, 2), 112.0);
    }

    #[test]
    fn stack_and_sample_invert() {
        let a = Tensor::<f32>::full([1, 2, 1, 1], 1.0);
        let b = Tensor::<f32>::full([1, 2, 1, 1], 2.0);
        let s = Tensor::stack(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(s.shape(), [2, 2, 1, 1]);
        assert_eq!(s.sample(1), b);
        assert_eq!(s.sample(0), a);
    }
}
