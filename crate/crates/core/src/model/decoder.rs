use crate::nn::{
    init_conv, push_conv, push_conv_mut, relu, relu_backward, sigmoid, sigmoid_backward,
    upsample2x, upsample2x_backward, Conv2d, InitRng, Map, ParamSet, ParamTensor, ParamTensorMut,
    Scalar,
};
use crate::ShapeError;

/// A mask decoder: repeated (3×3 convolution → rectifier → 2× bilinear
/// upsample) stages followed by a 1×1 convolution and a logistic squashing
/// into per-pixel probabilities. No skip connections: the decoder sees only
/// the bottleneck feature map.
#[derive(Clone)]
pub struct Decoder<T: Scalar> {
    pub stages: Vec<Conv2d<T>>,
    pub head: Conv2d<T>,
    prefix: &'static str,
}

/// Intermediates retained from a forward pass for backpropagation.
pub struct DecoderTrace<T: Scalar> {
    stage_inputs: Vec<Map<T>>,
    stage_relu: Vec<Map<T>>,
    head_input: Map<T>,
    output: Map<T>,
}

impl<T: Scalar> DecoderTrace<T> {
    pub fn output(&self) -> &Map<T> {
        &self.output
    }
}

/// Channel plan for the upsampling stages: walk the encoder widths back down
/// and keep the first width for the final stage, e.g. encoder [16, 32, 64,
/// 96] decodes through [64, 32, 16, 16].
fn stage_widths(encoder_widths: &[usize]) -> Vec<usize> {
    let n = encoder_widths.len();
    let mut out: Vec<usize> = encoder_widths[..n - 1].iter().rev().copied().collect();
    out.push(encoder_widths[0]);
    out
}

impl<T: Scalar> Decoder<T> {
    /// `prefix` distinguishes the main decoder (`de`) from the flow decoder
    /// (`de_flow`) in canonical parameter names.
    pub fn new(encoder_widths: &[usize], prefix: &'static str, rng: &mut InitRng) -> Self {
        let mut stages = Vec::new();
        let mut c_in = *encoder_widths.last().expect("non-empty widths");
        for c_out in stage_widths(encoder_widths) {
            let mut conv = Conv2d::zeros(3, 3, c_in, c_out, 1, 1);
            init_conv(&mut conv, rng);
            stages.push(conv);
            c_in = c_out;
        }
        let mut head = Conv2d::zeros(1, 1, c_in, 1, 1, 0);
        init_conv(&mut head, rng);
        Decoder { stages, head, prefix }
    }

    /// Decodes a feature map into mask probabilities at `2^stages` times the
    /// feature resolution.
    pub fn forward(&self, x: &Map<T>) -> Result<(Map<T>, DecoderTrace<T>), ShapeError> {
        if x.dim().2 != self.stages[0].in_channels() {
            return Err(ShapeError::new(format!(
                "decoder expects {} channels, got {}",
                self.stages[0].in_channels(),
                x.dim().2
            )));
        }
        let mut stage_inputs = Vec::with_capacity(self.stages.len());
        let mut stage_relu = Vec::with_capacity(self.stages.len());
        let mut cur = x.clone();
        for stage in &self.stages {
            let r = relu(&stage.forward(&cur));
            let up = upsample2x(&r);
            stage_inputs.push(cur);
            stage_relu.push(r);
            cur = up;
        }
        let logits = self.head.forward(&cur);
        let probs = sigmoid(&logits);
        let trace = DecoderTrace {
            stage_inputs,
            stage_relu,
            head_input: cur,
            output: probs.clone(),
        };
        Ok((probs, trace))
    }

    /// Backpropagates a gradient on the probability output into parameter
    /// gradients (accumulated into `grads`) and the feature-map gradient.
    pub fn backward(&self, trace: &DecoderTrace<T>, dy: &Map<T>, grads: &mut Self) -> Map<T> {
        let dz = sigmoid_backward(&trace.output, dy);
        let mut dcur = self.head.backward(
            &trace.head_input,
            &dz,
            &mut grads.head.w,
            &mut grads.head.b,
        );
        for i in (0..self.stages.len()).rev() {
            let (rh, rw, _) = trace.stage_relu[i].dim();
            let dup = upsample2x_backward(&dcur, rh, rw);
            let dr = relu_backward(&trace.stage_relu[i], &dup);
            let g = &mut grads.stages[i];
            dcur = self.stages[i].backward(&trace.stage_inputs[i], &dr, &mut g.w, &mut g.b);
        }
        dcur
    }
}

impl<T: Scalar> ParamSet<T> for Decoder<T> {
    fn tensors(&self) -> Vec<ParamTensor<'_, T>> {
        let mut out = Vec::new();
        for (i, stage) in self.stages.iter().enumerate() {
            push_conv(&format!("{}.stage{}.conv", self.prefix, i + 1), stage, &mut out);
        }
        push_conv(&format!("{}.head", self.prefix), &self.head, &mut out);
        out
    }

    fn tensors_mut(&mut self) -> Vec<ParamTensorMut<'_, T>> {
        let mut out = Vec::new();
        for (i, stage) in self.stages.iter_mut().enumerate() {
            push_conv_mut(&format!("{}.stage{}.conv", self.prefix, i + 1), stage, &mut out);
        }
        push_conv_mut(&format!("{}.head", self.prefix), &mut self.head, &mut out);
        out
    }
}
