use ndarray::{ArrayViewD, ArrayViewMutD};
use sha2::{Digest, Sha256};

use super::{Conv2d, Dense, Scalar};

/// A named read-only view of one parameter tensor.
pub type ParamTensor<'a, T> = (String, ArrayViewD<'a, T>);
/// A named mutable view of one parameter tensor.
pub type ParamTensorMut<'a, T> = (String, ArrayViewMutD<'a, T>);

/// A structure whose floating-point state can be walked as a flat, stably
/// ordered list of named tensors.
///
/// Gradients and optimizer velocities are represented by the *same* struct
/// type as the parameters they mirror (see [`ParamSet::zeros_like`]), so an
/// update rule is just a zip over three `tensors`/`tensors_mut` walks. The
/// order and names returned must be identical for equal architectures; they
/// define the checkpoint layout and the checksum domain.
pub trait ParamSet<T: Scalar>: Clone {
    fn tensors(&self) -> Vec<ParamTensor<'_, T>>;
    fn tensors_mut(&mut self) -> Vec<ParamTensorMut<'_, T>>;

    /// Same architecture, every value zero. Starting point for gradient and
    /// velocity buffers.
    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, mut t) in z.tensors_mut() {
            t.fill(T::zero());
        }
        z
    }
}

/// Total number of scalar parameters.
pub fn param_count<T: Scalar, P: ParamSet<T>>(p: &P) -> usize {
    p.tensors().iter().map(|(_, t)| t.len()).sum()
}

/// SHA-256 over names and element bits in walk order, as lowercase hex.
///
/// Elements are widened to f64 before hashing, which is lossless for f32 and
/// makes the digest independent of the training precision. Used to pin
/// frozen modules in place across an adaptation run.
pub fn param_checksum<T: Scalar, P: ParamSet<T>>(p: &P) -> String {
    let mut h = Sha256::new();
    for (name, t) in p.tensors() {
        h.update((name.len() as u64).to_le_bytes());
        h.update(name.as_bytes());
        h.update((t.len() as u64).to_le_bytes());
        for &v in t.iter() {
            h.update(v.to_f64_().to_bits().to_le_bytes());
        }
    }
    let digest = h.finalize();
    let mut out = String::with_capacity(64);
    for byte in digest {
        use std::fmt::Write;
        write!(out, "{byte:02x}").expect("hex format");
    }
    out
}

/// Name of the first tensor containing a non-finite value, if any.
pub fn first_nonfinite<T: Scalar, P: ParamSet<T>>(p: &P) -> Option<String> {
    for (name, t) in p.tensors() {
        if t.iter().any(|v| !v.is_finite()) {
            return Some(name);
        }
    }
    None
}

pub fn push_conv<'a, T: Scalar>(
    name: &str,
    layer: &'a Conv2d<T>,
    out: &mut Vec<ParamTensor<'a, T>>,
) {
    out.push((format!("{name}.w"), layer.w.view().into_dyn()));
    out.push((format!("{name}.b"), layer.b.view().into_dyn()));
}

pub fn push_conv_mut<'a, T: Scalar>(
    name: &str,
    layer: &'a mut Conv2d<T>,
    out: &mut Vec<ParamTensorMut<'a, T>>,
) {
    out.push((format!("{name}.w"), layer.w.view_mut().into_dyn()));
    out.push((format!("{name}.b"), layer.b.view_mut().into_dyn()));
}

pub fn push_dense<'a, T: Scalar>(
    name: &str,
    layer: &'a Dense<T>,
    out: &mut Vec<ParamTensor<'a, T>>,
) {
    out.push((format!("{name}.w"), layer.w.view().into_dyn()));
    out.push((format!("{name}.b"), layer.b.view().into_dyn()));
}

pub fn push_dense_mut<'a, T: Scalar>(
    name: &str,
    layer: &'a mut Dense<T>,
    out: &mut Vec<ParamTensorMut<'a, T>>,
) {
    out.push((format!("{name}.w"), layer.w.view_mut().into_dyn()));
    out.push((format!("{name}.b"), layer.b.view_mut().into_dyn()));
}
