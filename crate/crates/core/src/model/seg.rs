use super::{Decoder, DecoderTrace, Encoder, EncoderTrace, Fusion, FusionTrace, ModelConfig};
use crate::nn::{
    add_into, crop_map, pad_reflect, InitRng, Map, ParamSet, ParamTensor, ParamTensorMut, Scalar,
};
use crate::ShapeError;

/// The full segmentation network: two-branch encoder, fusion, main decoder,
/// and (when flow supervision is on) the auxiliary flow decoder.
///
/// The domain discriminator is deliberately *not* part of this struct: it is
/// an adversary with its own optimizer and its own parameter walk, never
/// updated by the segmentation objective.
#[derive(Clone)]
pub struct SegModel<T: Scalar> {
    pub config: ModelConfig,
    pub encoder: Encoder<T>,
    pub fusion: Option<Fusion<T>>,
    pub decoder: Decoder<T>,
    pub flow_decoder: Option<Decoder<T>>,
}

/// Everything produced by one full forward pass, including the intermediates
/// needed to backpropagate.
pub struct SegForward<T: Scalar> {
    /// Main mask probabilities, input resolution.
    pub y_main: Map<T>,
    /// Flow-decoder mask probabilities, present under flow supervision.
    pub y_flow: Option<Map<T>>,
    /// Fused feature map (the discriminator's input).
    pub fused: Map<T>,
    trace: FeatureTrace<T>,
    dec_trace: DecoderTrace<T>,
    flow_dec_trace: Option<DecoderTrace<T>>,
}

/// Intermediates of the encode→fuse prefix shared by all objectives.
pub struct FeatureTrace<T: Scalar> {
    enc: EncoderTrace<T>,
    fusion: Option<FusionTrace<T>>,
    x_flow: Option<Map<T>>,
}

impl<T: Scalar> SegModel<T> {
    /// Builds a freshly initialized network. Draw order is fixed (appearance
    /// branch, flow branch, fusion, decoder, flow decoder), so a seed pins
    /// every parameter.
    pub fn new(config: &ModelConfig, seed: u64) -> Self {
        config.validate().expect("valid model config");
        let mut rng = InitRng::new(seed);
        let encoder = Encoder::new(&config.stage_widths, config.flow_branch, &mut rng);
        let fusion = config
            .flow_branch
            .then(|| Fusion::new(config.fusion, config.feature_channels(), &mut rng));
        let decoder = Decoder::new(&config.stage_widths, "de", &mut rng);
        let flow_decoder = config
            .flow_supervision
            .then(|| Decoder::new(&config.stage_widths, "de_flow", &mut rng));
        SegModel { config: config.clone(), encoder, fusion, decoder, flow_decoder }
    }

    /// Encodes and fuses one frame, without decoding. This is the shared
    /// prefix of the segmentation and adversarial objectives.
    pub fn features(
        &self,
        image: &Map<T>,
        flow3: &Map<T>,
    ) -> Result<(Map<T>, FeatureTrace<T>), ShapeError> {
        self.features_with_encoder(&self.encoder, image, flow3)
    }

    /// Same as [`SegModel::features`] but running an external encoder (the
    /// target-domain encoder during weights-separated adaptation) in front
    /// of this model's fusion layer.
    pub fn features_with_encoder(
        &self,
        encoder: &Encoder<T>,
        image: &Map<T>,
        flow3: &Map<T>,
    ) -> Result<(Map<T>, FeatureTrace<T>), ShapeError> {
        let (x_app, x_flow, enc) = encoder.forward(image, flow3)?;
        let (fused, fusion_trace, x_flow) = match (&self.fusion, x_flow) {
            (Some(fusion), Some(x_flow)) => {
                let (fused, tr) = fusion.forward(&x_app, &x_flow)?;
                (fused, Some(tr), Some(x_flow))
            }
            _ => (x_app, None, None),
        };
        Ok((fused, FeatureTrace { enc, fusion: fusion_trace, x_flow }))
    }

    /// Full forward pass: masks from both decoders plus the fused features.
    pub fn forward(&self, image: &Map<T>, flow3: &Map<T>) -> Result<SegForward<T>, ShapeError> {
        let (fused, trace) = self.features(image, flow3)?;
        let (y_main, dec_trace) = self.decoder.forward(&fused)?;
        let (y_flow, flow_dec_trace) = match (&self.flow_decoder, &trace.x_flow) {
            (Some(dec), Some(x_flow)) => {
                let (y, tr) = dec.forward(x_flow)?;
                (Some(y), Some(tr))
            }
            _ => (None, None),
        };
        Ok(SegForward { y_main, y_flow, fused, trace, dec_trace, flow_dec_trace })
    }

    /// Backpropagates mask-probability gradients from both decoder outputs
    /// into a full parameter-gradient set.
    pub fn backward_masks(
        &self,
        fwd: &SegForward<T>,
        dy_main: &Map<T>,
        dy_flow: Option<&Map<T>>,
        grads: &mut Self,
    ) {
        let d_fused = self.decoder.backward(&fwd.dec_trace, dy_main, &mut grads.decoder);
        let (d_app, mut d_flow) = self.split_fused_gradient(&fwd.trace, &d_fused, grads);
        if let (Some(dec), Some(tr), Some(dy)) = (&self.flow_decoder, &fwd.flow_dec_trace, dy_flow)
        {
            let gdec = grads.flow_decoder.as_mut().expect("matching architecture");
            let d_extra = dec.backward(tr, dy, gdec);
            match &mut d_flow {
                Some(acc) => add_into(acc, &d_extra),
                None => d_flow = Some(d_extra),
            }
        }
        self.encoder
            .backward(&fwd.trace.enc, &d_app, d_flow.as_ref(), &mut grads.encoder);
    }

    /// Backpropagates a gradient on the fused feature map into encoder
    /// parameter gradients only, passing through the fusion layer without
    /// updating it. This is the adversarial path: the discriminator's input
    /// gradient flows back to the (shared or target) encoder while φ stays
    /// untouched.
    pub fn backward_features_to_encoder(
        &self,
        encoder: &Encoder<T>,
        trace: &FeatureTrace<T>,
        d_fused: &Map<T>,
        grads: &mut Encoder<T>,
    ) {
        let mut sink = self.zeros_like();
        let (d_app, d_flow) = self.split_fused_gradient(trace, d_fused, &mut sink);
        encoder.backward(&trace.enc, &d_app, d_flow.as_ref(), grads);
    }

    /// Routes a fused-feature gradient back through the fusion layer (into
    /// `grads.fusion`) to per-branch feature gradients.
    fn split_fused_gradient(
        &self,
        trace: &FeatureTrace<T>,
        d_fused: &Map<T>,
        grads: &mut Self,
    ) -> (Map<T>, Option<Map<T>>) {
        match (&self.fusion, &trace.fusion) {
            (Some(fusion), Some(tr)) => {
                let gfuse = grads.fusion.as_mut().expect("matching architecture");
                let (d_app, d_flow) = fusion.backward(tr, d_fused, gfuse);
                (d_app, Some(d_flow))
            }
            _ => (d_fused.clone(), None),
        }
    }

    /// Segments a frame of any size: reflect-pads up to the encoder stride,
    /// runs the network, and crops the mask back to the input resolution.
    pub fn segment(&self, image: &Map<T>, flow3: &Map<T>) -> Result<Map<T>, ShapeError> {
        let (h, w, _) = image.dim();
        let s = self.encoder.stride();
        let th = h.div_ceil(s) * s;
        let tw = w.div_ceil(s) * s;
        let padded_image = pad_reflect(image, th, tw);
        let padded_flow = if self.encoder.flow.is_some() {
            if flow3.dim() != image.dim() {
                return Err(ShapeError::new(format!(
                    "flow {:?} vs image {:?}",
                    flow3.dim(),
                    image.dim()
                )));
            }
            pad_reflect(flow3, th, tw)
        } else {
            padded_image.clone()
        };
        let fwd = self.forward(&padded_image, &padded_flow)?;
        Ok(crop_map(&fwd.y_main, h, w))
    }
}

impl<T: Scalar> ParamSet<T> for SegModel<T> {
    fn tensors(&self) -> Vec<ParamTensor<'_, T>> {
        let mut out = self.encoder.tensors();
        if let Some(fusion) = &self.fusion {
            out.extend(fusion.tensors());
        }
        out.extend(self.decoder.tensors());
        if let Some(dec) = &self.flow_decoder {
            out.extend(dec.tensors());
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<ParamTensorMut<'_, T>> {
        let mut out = self.encoder.tensors_mut();
        if let Some(fusion) = &mut self.fusion {
            out.extend(fusion.tensors_mut());
        }
        out.extend(self.decoder.tensors_mut());
        if let Some(dec) = &mut self.flow_decoder {
            out.extend(dec.tensors_mut());
        }
        out
    }
}
