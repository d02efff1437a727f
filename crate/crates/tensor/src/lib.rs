//! Minimal dense-tensor engine for burst restoration.
//!
//! Tensors are 4-D (`N x C x H x W`), row-major with W fastest, in `f32` or
//! `f64`. Operations are recorded on a [`Tape`] through [`Var`] handles and
//! differentiated in reverse with [`Tape::backward`].
//!
//! ```
//! use burstkit_tensor::{Tape, Tensor};
//!
//! let tape = Tape::<f64>::new();
//! let x = tape.leaf(Tensor::from_slice([1, 1, 1, 3], &[1.0, 2.0, 3.0]).unwrap(), true);
//! let loss = x.mul(x).unwrap().sum().unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0, 6.0]);
//! ```

mod error;
pub mod gradcheck;
pub mod io;
pub mod kernels;
mod ops;
pub mod par;
mod scalar;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use kernels::conv::ConvSpec;
pub use kernels::resize::ResizeMode;
pub use ops::{concat_batch, concat_channels, scaled_dims};
pub use scalar::{DType, Scalar};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{numel, Shape, Tensor};

/// Resamples a tensor outside of any tape.
pub fn resize<T: Scalar>(x: &Tensor<T>, out_h: usize, out_w: usize, mode: ResizeMode) -> Result<Tensor<T>> {
    kernels::resize::resize_forward(x, out_h, out_w, mode)
}

/// Depth-to-space outside of any tape.
pub fn pixel_shuffle<T: Scalar>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    kernels::shuffle::pixel_shuffle(x, r)
}

/// Space-to-depth outside of any tape.
pub fn pixel_unshuffle<T: Scalar>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    kernels::shuffle::pixel_unshuffle(x, r)
}

/// Convolution outside of any tape.
pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: ConvSpec,
) -> Result<Tensor<T>> {
    kernels::conv::conv2d_forward(x, weight, bias, spec)
}
