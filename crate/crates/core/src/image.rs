//! Raster types shared by every stage: RGB images in `[0, 1]` and depth maps in meters.

use discgan_tensor::{Scalar, Tensor};

use crate::error::{Error, Result};

/// Interleaved RGB image with channel values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::Dimension(format!(
                "{width}x{height} RGB image needs {} values, got {}",
                width * height * 3,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!(
                "RGB value {bad} outside [0, 1]"
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        let data = (0..width * height).flat_map(|_| rgb).collect();
        Self::new(width, height, data).expect("fill color in range")
    }

    /// Builds an image from `f(x, y) -> rgb`, clamping into `[0, 1]`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend(f(x, y).iter().map(|v| v.clamp(0.0, 1.0)));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Interleaved `r, g, b` values, row-major.
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Values of one channel in raster order.
    pub fn channel(&self, c: usize) -> impl Iterator<Item = f32> + '_ {
        self.data.iter().skip(c).step_by(3).copied()
    }

    pub fn flip_horizontal(&self) -> Self {
        Self::from_fn(self.width, self.height, |x, y| self.pixel(self.width - 1 - x, y))
    }

    /// `(1, 3, H, W)` tensor.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::from_fn([1, 3, self.height, self.width], |_, c, y, x| {
            T::from_f32(self.data[(y * self.width + x) * 3 + c]).unwrap()
        })
    }

    /// Reads sample `n` of an `(N, 3, H, W)` tensor, clamping into `[0, 1]`.
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>, n: usize) -> Result<Self> {
        let [batch, c, h, w] = t.shape();
        if c != 3 || n >= batch {
            return Err(Error::Dimension(format!(
                "cannot read image {n} from tensor {:?}",
                t.shape()
            )));
        }
        Ok(Self::from_fn(w, h, |x, y| {
            let v = |ch| t.get(n, ch, y, x).to_f32().unwrap_or(0.0);
            [v(0), v(1), v(2)]
        }))
    }
}

/// Per-pixel non-negative depth in meters.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Dimension(format!(
                "{width}x{height} depth map needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|d| !d.is_finite() || **d < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "depth {bad} is negative or not finite"
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, depth: f32) -> Self {
        Self::new(width, height, vec![depth; width * height]).expect("valid constant depth")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().map(|&d| d as f64).sum::<f64>() / self.data.len() as f64
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for y in 0..self.height {
            for x in 0..self.width {
                data.push(self.at(self.width - 1 - x, y));
            }
        }
        Self {
            width: self.width,
            height: self.height,
            data,
        }
    }
}

pub(crate) fn check_same_dims(img: &RgbImage, depth: &DepthMap) -> Result<()> {
    if img.dims() != depth.dims() {
        return Err(Error::Dimension(format!(
            "image is {}x{} but depth map is {}x{}",
            img.width(),
            img.height(),
            depth.width(),
            depth.height()
        )));
    }
    Ok(())
}
