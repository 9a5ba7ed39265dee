use super::TrainError;
use crate::nn::{ParamSet, Scalar};

/// Exponentially decayed learning rate: `base · decay^epoch`.
pub fn lr_schedule(base_lr: f64, epoch: usize, decay_factor: f64) -> f64 {
    base_lr * decay_factor.powi(epoch as i32)
}

/// Linear ramp of the confusion-loss weight over the run:
/// `epoch / max_epoch`, clamped to [0, 1].
pub fn lambda1_schedule(epoch: usize, max_epoch: usize) -> f64 {
    if max_epoch == 0 {
        return 0.0;
    }
    (epoch as f64 / max_epoch as f64).clamp(0.0, 1.0)
}

/// One classical-momentum SGD update with L2 weight decay folded into the
/// gradient:
///
/// ```text
/// v ← momentum·v + (grad + weight_decay·param)
/// param ← param − lr·v
/// ```
///
/// The whole step aborts — leaving parameters and velocity untouched — if
/// any gradient element is non-finite, reporting the offending tensor.
pub fn sgd_step<T: Scalar, P: ParamSet<T>>(
    params: &mut P,
    grads: &P,
    velocity: &mut P,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<(), TrainError> {
    if let Some(name) = crate::nn::first_nonfinite(grads) {
        return Err(TrainError::NonFiniteGradient { name });
    }
    let lr = T::from_f64(lr);
    let mu = T::from_f64(momentum);
    let wd = T::from_f64(weight_decay);
    let mut p_walk = params.tensors_mut();
    let g_walk = grads.tensors();
    let mut v_walk = velocity.tensors_mut();
    debug_assert_eq!(p_walk.len(), g_walk.len());
    debug_assert_eq!(p_walk.len(), v_walk.len());
    for (((pn, p), (gn, g)), (vn, v)) in
        p_walk.iter_mut().zip(g_walk.iter()).zip(v_walk.iter_mut())
    {
        debug_assert!(pn == gn && pn == vn, "parameter walks diverge: {pn} {gn} {vn}");
        for ((p, &g), v) in p.iter_mut().zip(g.iter()).zip(v.iter_mut()) {
            *v = mu * *v + (g + wd * *p);
            *p -= lr * *v;
        }
    }
    Ok(())
}

/// Momentum-SGD state for one parameter set. The velocity buffer is the
/// same struct type as the parameters it mirrors, so the optimizer walks
/// exactly the tensors it owns — a frozen module can simply not have an
/// optimizer, and no weight decay will ever touch it.
#[derive(Clone)]
pub struct Sgd<T: Scalar, P: ParamSet<T>> {
    pub velocity: P,
    pub momentum: f64,
    pub weight_decay: f64,
    _marker: std::marker::PhantomData<T>,
}

impl<T: Scalar, P: ParamSet<T>> Sgd<T, P> {
    pub fn new(params: &P, momentum: f64, weight_decay: f64) -> Self {
        Sgd {
            velocity: params.zeros_like(),
            momentum,
            weight_decay,
            _marker: std::marker::PhantomData,
        }
    }

    pub fn step(&mut self, params: &mut P, grads: &P, lr: f64) -> Result<(), TrainError> {
        sgd_step(params, grads, &mut self.velocity, lr, self.momentum, self.weight_decay)
    }
}
