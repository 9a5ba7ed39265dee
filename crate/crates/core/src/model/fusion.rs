use ndarray::Axis;

use super::FusionMode;
use crate::nn::{
    init_conv, push_conv, push_conv_mut, Conv2d, InitRng, Map, ParamSet, ParamTensor,
    ParamTensorMut, Scalar,
};
use crate::ShapeError;

/// The fusion layer φ merging the two encoder branches into one feature map.
///
/// `Conv` concatenates the branches along channels and mixes them with a 3×3
/// convolution back down to the single-branch width; `Product` and
/// `Addition` are parameter-free element-wise operators over equal-width
/// branches.
#[derive(Clone)]
pub struct Fusion<T: Scalar> {
    pub mode: FusionMode,
    /// Mixing convolution; present only in `Conv` mode.
    pub conv: Option<Conv2d<T>>,
}

/// Inputs retained for the backward pass.
pub struct FusionTrace<T: Scalar> {
    x_app: Map<T>,
    x_flow: Map<T>,
}

impl<T: Scalar> Fusion<T> {
    pub fn new(mode: FusionMode, channels: usize, rng: &mut InitRng) -> Self {
        let conv = match mode {
            FusionMode::Conv => {
                let mut c = Conv2d::zeros(3, 3, 2 * channels, channels, 1, 1);
                init_conv(&mut c, rng);
                Some(c)
            }
            FusionMode::Product | FusionMode::Addition => None,
        };
        Fusion { mode, conv }
    }

    pub fn forward(
        &self,
        x_app: &Map<T>,
        x_flow: &Map<T>,
    ) -> Result<(Map<T>, FusionTrace<T>), ShapeError> {
        if x_app.dim().0 != x_flow.dim().0 || x_app.dim().1 != x_flow.dim().1 {
            return Err(ShapeError::new(format!(
                "fusion spatial mismatch: {:?} vs {:?}",
                x_app.dim(),
                x_flow.dim()
            )));
        }
        let out = match self.mode {
            FusionMode::Conv => {
                let conv = self.conv.as_ref().expect("conv fusion has weights");
                let cat = ndarray::concatenate(Axis(2), &[x_app.view(), x_flow.view()])
                    .expect("matching spatial dims");
                let cat = cat.as_standard_layout().to_owned();
                if conv.in_channels() != cat.dim().2 {
                    return Err(ShapeError::new(format!(
                        "fusion conv expects {} channels, got {}",
                        conv.in_channels(),
                        cat.dim().2
                    )));
                }
                conv.forward(&cat)
            }
            FusionMode::Product | FusionMode::Addition => {
                if x_app.dim().2 != x_flow.dim().2 {
                    return Err(ShapeError::new(format!(
                        "{} fusion requires equal channel counts: {} vs {}",
                        self.mode,
                        x_app.dim().2,
                        x_flow.dim().2
                    )));
                }
                if self.mode == FusionMode::Product {
                    x_app * x_flow
                } else {
                    x_app + x_flow
                }
            }
        };
        Ok((out, FusionTrace { x_app: x_app.clone(), x_flow: x_flow.clone() }))
    }

    /// Returns gradients with respect to both branch features and accumulates
    /// the convolution gradient (if any) into `grads`.
    pub fn backward(
        &self,
        trace: &FusionTrace<T>,
        dy: &Map<T>,
        grads: &mut Self,
    ) -> (Map<T>, Map<T>) {
        match self.mode {
            FusionMode::Conv => {
                let conv = self.conv.as_ref().expect("conv fusion has weights");
                let gconv = grads.conv.as_mut().expect("matching architecture");
                let cat = ndarray::concatenate(
                    Axis(2),
                    &[trace.x_app.view(), trace.x_flow.view()],
                )
                .expect("matching spatial dims")
                .as_standard_layout()
                .to_owned();
                let dcat = conv.backward(&cat, dy, &mut gconv.w, &mut gconv.b);
                let c = trace.x_app.dim().2;
                let d_app = dcat.slice(ndarray::s![.., .., ..c]).to_owned();
                let d_flow = dcat.slice(ndarray::s![.., .., c..]).to_owned();
                (d_app, d_flow)
            }
            FusionMode::Product => (dy * &trace.x_flow, dy * &trace.x_app),
            FusionMode::Addition => (dy.clone(), dy.clone()),
        }
    }
}

impl<T: Scalar> ParamSet<T> for Fusion<T> {
    fn tensors(&self) -> Vec<ParamTensor<'_, T>> {
        let mut out = Vec::new();
        if let Some(conv) = &self.conv {
            push_conv("fuse.conv", conv, &mut out);
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<ParamTensorMut<'_, T>> {
        let mut out = Vec::new();
        if let Some(conv) = &mut self.conv {
            push_conv_mut("fuse.conv", conv, &mut out);
        }
        out
    }
}
