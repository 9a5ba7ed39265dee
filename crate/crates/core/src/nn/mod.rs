//! Minimal dense-prediction building blocks: convolutions, pointwise
//! nonlinearities, resampling, and parameter bookkeeping.
//!
//! Everything here is generic over [`Scalar`] so the same network definition
//! can train in `f32` and be finite-difference-checked in `f64`. Feature maps
//! use a channels-last [`Map`] layout, `(height, width, channels)`, which
//! keeps the innermost convolution loops contiguous.

mod conv;
mod dense;
mod init;
mod ops;
mod params;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use ndarray::Array3;
use num_traits::Float;

pub use conv::{conv_out_dim, Conv2d};
pub use dense::Dense;
pub use init::{init_conv, init_dense, InitRng};
pub use ops::{
    crop_map, global_avg_pool, global_avg_pool_backward, pad_reflect, relu, relu_backward,
    sigmoid, sigmoid_backward, sigmoid_scalar, upsample2x, upsample2x_backward,
};
pub use params::{
    first_nonfinite, param_checksum, param_count, push_conv, push_conv_mut, push_dense,
    push_dense_mut, ParamSet, ParamTensor, ParamTensorMut,
};

/// Floating-point element type for all tensors in this crate.
pub trait Scalar:
    Float
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64_(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_f64_(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_f64_(self) -> f64 {
        self
    }
}

/// A single feature map: `(height, width, channels)`.
pub type Map<T> = Array3<T>;

/// `acc += rhs`, used when fan-in gradients from several consumers meet.
pub fn add_into<T: Scalar>(acc: &mut Map<T>, rhs: &Map<T>) {
    debug_assert_eq!(acc.dim(), rhs.dim());
    let a = acc.as_slice_mut().expect("standard layout");
    let b = rhs.as_slice().expect("standard layout");
    for (x, &y) in a.iter_mut().zip(b) {
        *x += y;
    }
}
