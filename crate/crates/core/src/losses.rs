//! Scalar training objectives for the segmentation network and the domain
//! discriminator, plus their gradients with respect to the predictions.
//!
//! All losses are minimized quantities and stay finite for any input thanks
//! to a two-sided probability clamp before every logarithm. Gradients are
//! gated to zero in the clamped region, matching the true derivative of the
//! clamped objective so finite-difference checks agree everywhere.

use serde::{Deserialize, Serialize};

use crate::nn::{Map, Scalar};
use crate::ShapeError;

/// Mixing weights for the composite losses and the probability clamp.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    /// Weight of the main-decoder mask loss in the supervised total.
    pub alpha1: f64,
    /// Weight of the flow-decoder mask loss in the supervised total.
    pub alpha2: f64,
    /// Weight of the confusion term in the separated-adaptation total.
    pub beta1: f64,
    /// Weight of the discriminator term in the separated-adaptation total.
    pub beta2: f64,
    /// Weight of the confusion term in the shared-adaptation total
    /// (ramped over epochs by the trainer).
    pub lambda1: f64,
    /// Weight of the discriminator term in the shared-adaptation total.
    pub lambda2: f64,
    /// Probability clamp applied inside all logs.
    pub eps: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha1: 0.5,
            alpha2: 0.5,
            beta1: 1.0,
            beta2: 0.5,
            lambda1: 0.0,
            lambda2: 0.5,
            eps: 1e-6,
        }
    }
}

impl LossWeights {
    /// Checks the documented invariants: nonnegative weights and a clamp
    /// strictly inside (0, 0.5).
    pub fn validate(&self) -> Result<(), String> {
        let named = [
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
        ];
        for (name, v) in named {
            // The negated form rejects NaN, which `v < 0.0` would accept.
            #[allow(clippy::neg_cmp_op_on_partial_ord)]
            if !(v >= 0.0) {
                return Err(format!("loss weight {name} = {v} must be >= 0"));
            }
        }
        if !(self.eps > 0.0 && self.eps < 0.5) {
            return Err(format!("eps = {} must lie in (0, 0.5)", self.eps));
        }
        Ok(())
    }
}

#[inline]
fn clamp01<T: Scalar>(p: T, eps: T) -> T {
    p.max(eps).min(T::one() - eps)
}

/// Binary cross-entropy between a {0,1} mask and a probability map, averaged
/// over all entries. Probabilities are clamped to `[eps, 1-eps]` before the
/// logs, so the result is finite for any input.
pub fn mask_loss<T: Scalar>(y: &Map<T>, yhat: &Map<T>, eps: f64) -> Result<T, ShapeError> {
    check_pair(y, yhat)?;
    let e = T::from_f64(eps);
    let n = T::from_f64(y.len() as f64);
    let mut acc = T::zero();
    for (&t, &p) in y.iter().zip(yhat.iter()) {
        let pc = clamp01(p, e);
        acc += t * pc.ln() + (T::one() - t) * (T::one() - pc).ln();
    }
    Ok(-acc / n)
}

/// Gradient of [`mask_loss`] with respect to the prediction map. Zero where
/// the prediction sits in the clamped region (the clamped objective is flat
/// there).
pub fn mask_loss_backward<T: Scalar>(
    y: &Map<T>,
    yhat: &Map<T>,
    eps: f64,
) -> Result<Map<T>, ShapeError> {
    check_pair(y, yhat)?;
    let e = T::from_f64(eps);
    let hi = T::one() - e;
    let inv_n = T::one() / T::from_f64(y.len() as f64);
    let mut dp = yhat.clone();
    for (d, &t) in dp.iter_mut().zip(y.iter()) {
        let p = *d;
        *d = if p <= e || p >= hi {
            T::zero()
        } else {
            -(t / p - (T::one() - t) / (T::one() - p)) * inv_n
        };
    }
    Ok(dp)
}

fn check_pair<T: Scalar>(y: &Map<T>, yhat: &Map<T>) -> Result<(), ShapeError> {
    if y.dim() != yhat.dim() {
        return Err(ShapeError::new(format!(
            "mask {:?} vs prediction {:?}",
            y.dim(),
            yhat.dim()
        )));
    }
    if y.is_empty() {
        return Err(ShapeError::new("empty mask"));
    }
    Ok(())
}

/// Weighted sum of the two mask-loss components:
/// `alpha1 * l_main + alpha2 * l_flow`.
pub fn combine_supervised<T: Scalar>(l_main: T, l_flow: T, w: &LossWeights) -> T {
    T::from_f64(w.alpha1) * l_main + T::from_f64(w.alpha2) * l_flow
}

/// Supervised segmentation loss over both decoders against one mask.
pub fn supervised_loss<T: Scalar>(
    y: &Map<T>,
    yhat_main: &Map<T>,
    yhat_flow: &Map<T>,
    w: &LossWeights,
) -> Result<T, ShapeError> {
    let l_main = mask_loss(y, yhat_main, w.eps)?;
    let l_flow = mask_loss(y, yhat_flow, w.eps)?;
    Ok(combine_supervised(l_main, l_flow, w))
}

/// Domain-confusion objective for the encoder: mean of `-ln d` over the
/// discriminator's outputs on target samples. Minimal when the discriminator
/// reads every target sample as source.
pub fn confusion_loss<T: Scalar>(d_target: &[T], eps: f64) -> T {
    assert!(!d_target.is_empty(), "confusion_loss over empty batch");
    let e = T::from_f64(eps);
    let mean: T = d_target.iter().map(|&d| clamp01(d, e).ln()).sum();
    -mean / T::from_f64(d_target.len() as f64)
}

/// Gradient of [`confusion_loss`] with respect to each discriminator output.
/// Strictly negative in the open interval: the encoder is rewarded for
/// pushing target outputs up.
pub fn confusion_loss_backward<T: Scalar>(d_target: &[T], eps: f64) -> Vec<T> {
    let e = T::from_f64(eps);
    let hi = T::one() - e;
    let inv_n = T::one() / T::from_f64(d_target.len() as f64);
    d_target
        .iter()
        .map(|&d| {
            if d <= e || d >= hi {
                T::zero()
            } else {
                -inv_n / d
            }
        })
        .collect()
}

/// Discriminator objective: source samples toward 1, target samples toward 0.
pub fn discriminator_loss<T: Scalar>(d_source: &[T], d_target: &[T], eps: f64) -> T {
    assert!(
        !d_source.is_empty() && !d_target.is_empty(),
        "discriminator_loss over empty batch"
    );
    let e = T::from_f64(eps);
    let src: T = d_source.iter().map(|&d| clamp01(d, e).ln()).sum();
    let tgt: T = d_target
        .iter()
        .map(|&d| clamp01(T::one() - d, e).ln())
        .sum();
    -src / T::from_f64(d_source.len() as f64) - tgt / T::from_f64(d_target.len() as f64)
}

/// Gradients of [`discriminator_loss`]: negative on source outputs, positive
/// on target outputs — the min-max opposition to [`confusion_loss_backward`].
pub fn discriminator_loss_backward<T: Scalar>(
    d_source: &[T],
    d_target: &[T],
    eps: f64,
) -> (Vec<T>, Vec<T>) {
    let e = T::from_f64(eps);
    let hi = T::one() - e;
    let inv_n = T::one() / T::from_f64(d_source.len() as f64);
    let inv_m = T::one() / T::from_f64(d_target.len() as f64);
    let ds = d_source
        .iter()
        .map(|&d| {
            if d <= e || d >= hi {
                T::zero()
            } else {
                -inv_n / d
            }
        })
        .collect();
    let dt = d_target
        .iter()
        .map(|&d| {
            if d <= e || d >= hi {
                T::zero()
            } else {
                inv_m / (T::one() - d)
            }
        })
        .collect();
    (ds, dt)
}

/// Reporting total for the weights-separated adaptation stage:
/// `beta1 * l_ent + beta2 * l_d`.
pub fn uda_loss<T: Scalar>(l_ent: T, l_d: T, w: &LossWeights) -> T {
    T::from_f64(w.beta1) * l_ent + T::from_f64(w.beta2) * l_d
}

/// Reporting total for the weights-shared adaptation stage:
/// `l_s + lambda1 * l_ent + lambda2 * l_d`.
pub fn shared_loss<T: Scalar>(l_s: T, l_ent: T, l_d: T, w: &LossWeights) -> T {
    l_s + T::from_f64(w.lambda1) * l_ent + T::from_f64(w.lambda2) * l_d
}
