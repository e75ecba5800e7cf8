//! Small dense-tensor engine: NCHW tensors, convolution kernels, a single-use
//! reverse-mode tape and the Adam optimizer.

mod adam;
mod error;
pub mod gradcheck;
mod kernels;
mod tape;
mod tensor;

pub use adam::Adam;
pub use error::{Result, TensorError};
pub use kernels::{
    adain, conv2d, conv2d_transpose, instance_stats, InstanceStats, INSTANCE_EPS,
};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{numel, Scalar, Shape, Tensor};
