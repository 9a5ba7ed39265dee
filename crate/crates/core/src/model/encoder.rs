use crate::nn::{
    init_conv, push_conv, push_conv_mut, relu, relu_backward, Conv2d, InitRng, Map, ParamSet,
    ParamTensor, ParamTensorMut, Scalar,
};
use crate::ShapeError;

/// One encoder branch: a stack of stride-2 3×3 convolutions with rectified
/// activations, halving the spatial resolution at every stage.
#[derive(Clone)]
pub struct BranchEncoder<T: Scalar> {
    pub stages: Vec<Conv2d<T>>,
}

/// Per-stage intermediates kept from a branch forward pass: the stage input
/// (needed by the convolution backward) and the activation output (gates the
/// rectifier backward).
pub struct BranchTrace<T: Scalar> {
    inputs: Vec<Map<T>>,
    outputs: Vec<Map<T>>,
}

impl<T: Scalar> BranchEncoder<T> {
    pub fn new(in_channels: usize, widths: &[usize], rng: &mut InitRng) -> Self {
        let mut stages = Vec::with_capacity(widths.len());
        let mut c_in = in_channels;
        for &c_out in widths {
            let mut conv = Conv2d::zeros(3, 3, c_in, c_out, 2, 1);
            init_conv(&mut conv, rng);
            stages.push(conv);
            c_in = c_out;
        }
        BranchEncoder { stages }
    }

    pub fn forward(&self, x: &Map<T>) -> (Map<T>, BranchTrace<T>) {
        let mut inputs = Vec::with_capacity(self.stages.len());
        let mut outputs = Vec::with_capacity(self.stages.len());
        let mut cur = x.clone();
        for stage in &self.stages {
            let y = relu(&stage.forward(&cur));
            inputs.push(cur);
            outputs.push(y.clone());
            cur = y;
        }
        (cur, BranchTrace { inputs, outputs })
    }

    /// Accumulates parameter gradients into `grads` and returns the gradient
    /// with respect to the branch input.
    pub fn backward(&self, trace: &BranchTrace<T>, dy: &Map<T>, grads: &mut Self) -> Map<T> {
        let mut dcur = dy.clone();
        for i in (0..self.stages.len()).rev() {
            let dz = relu_backward(&trace.outputs[i], &dcur);
            let g = &mut grads.stages[i];
            dcur = self.stages[i].backward(&trace.inputs[i], &dz, &mut g.w, &mut g.b);
        }
        dcur
    }

    fn push<'a>(&'a self, prefix: &str, out: &mut Vec<ParamTensor<'a, T>>) {
        for (i, stage) in self.stages.iter().enumerate() {
            push_conv(&format!("{prefix}.stage{}.conv", i + 1), stage, out);
        }
    }

    fn push_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamTensorMut<'a, T>>) {
        for (i, stage) in self.stages.iter_mut().enumerate() {
            push_conv_mut(&format!("{prefix}.stage{}.conv", i + 1), stage, out);
        }
    }

    /// Same architecture with every parameter zeroed; gradient buffer.
    pub fn zeroed(&self) -> Self {
        let mut z = self.clone();
        for stage in &mut z.stages {
            stage.w.fill(T::zero());
            stage.b.fill(T::zero());
        }
        z
    }
}

/// The two-branch encoder `En`: an appearance branch over RGB and (unless
/// configured away) a flow branch over the 3-channel padded flow field. The
/// branches share no parameters and meet only at the fusion layer.
#[derive(Clone)]
pub struct Encoder<T: Scalar> {
    pub app: BranchEncoder<T>,
    pub flow: Option<BranchEncoder<T>>,
}

pub struct EncoderTrace<T: Scalar> {
    app: BranchTrace<T>,
    flow: Option<BranchTrace<T>>,
}

impl<T: Scalar> Encoder<T> {
    pub fn new(widths: &[usize], flow_branch: bool, rng: &mut InitRng) -> Self {
        let app = BranchEncoder::new(3, widths, rng);
        let flow = flow_branch.then(|| BranchEncoder::new(3, widths, rng));
        Encoder { app, flow }
    }

    pub fn stages(&self) -> usize {
        self.app.stages.len()
    }

    /// Total downsampling factor from input to feature resolution.
    pub fn stride(&self) -> usize {
        1 << self.stages()
    }

    /// Encodes one frame: appearance features from `image`, flow features
    /// from `flow3` (ignored when the flow branch is disabled). Spatial dims
    /// must be divisible by [`Encoder::stride`] so the decoder's repeated 2×
    /// upsampling lands back exactly on the input resolution.
    #[allow(clippy::type_complexity)]
    pub fn forward(
        &self,
        image: &Map<T>,
        flow3: &Map<T>,
    ) -> Result<(Map<T>, Option<Map<T>>, EncoderTrace<T>), ShapeError> {
        let (h, w, c) = image.dim();
        if c != 3 {
            return Err(ShapeError::new(format!("image must have 3 channels, got {c}")));
        }
        let s = self.stride();
        if h % s != 0 || w % s != 0 {
            return Err(ShapeError::new(format!(
                "input {h}x{w} not divisible by encoder stride {s}"
            )));
        }
        let (x_app, app_trace) = self.app.forward(image);
        let (x_flow, flow_trace) = match &self.flow {
            Some(branch) => {
                if flow3.dim() != image.dim() {
                    return Err(ShapeError::new(format!(
                        "flow {:?} vs image {:?}",
                        flow3.dim(),
                        image.dim()
                    )));
                }
                let (x, t) = branch.forward(flow3);
                (Some(x), Some(t))
            }
            None => (None, None),
        };
        Ok((x_app, x_flow, EncoderTrace { app: app_trace, flow: flow_trace }))
    }

    /// Backpropagates feature gradients into parameter gradients. Input
    /// gradients are dropped (the frames are data, not parameters).
    pub fn backward(
        &self,
        trace: &EncoderTrace<T>,
        d_app: &Map<T>,
        d_flow: Option<&Map<T>>,
        grads: &mut Self,
    ) {
        self.app.backward(&trace.app, d_app, &mut grads.app);
        if let (Some(branch), Some(t), Some(d)) = (&self.flow, &trace.flow, d_flow) {
            branch.backward(t, d, grads.flow.as_mut().expect("matching architecture"));
        }
    }
}

impl<T: Scalar> ParamSet<T> for Encoder<T> {
    fn tensors(&self) -> Vec<ParamTensor<'_, T>> {
        let mut out = Vec::new();
        self.app.push("en_s.app", &mut out);
        if let Some(flow) = &self.flow {
            flow.push("en_s.flow", &mut out);
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<ParamTensorMut<'_, T>> {
        let mut out = Vec::new();
        self.app.push_mut("en_s.app", &mut out);
        if let Some(flow) = &mut self.flow {
            flow.push_mut("en_s.flow", &mut out);
        }
        out
    }
}

/// Starts the target-domain encoder as an independently mutable value copy
/// of the source encoder.
pub fn init_target_encoder<T: Scalar>(source: &Encoder<T>) -> Encoder<T> {
    source.clone()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn rng() -> InitRng {
        InitRng::new(42)
    }

    fn random_map(rng: &mut InitRng, h: usize, w: usize, c: usize) -> Map<f64> {
        Array3::from_shape_fn((h, w, c), |_| rng.normal() * 0.5)
    }

    #[test]
    fn four_stages_give_stride_16() {
        let mut r = rng();
        let enc: Encoder<f64> = Encoder::new(&[16, 32, 64, 96], true, &mut r);
        assert_eq!(enc.stride(), 16);
        let image = random_map(&mut r, 32, 48, 3);
        let flow = random_map(&mut r, 32, 48, 3);
        let (x_app, x_flow, _) = enc.forward(&image, &flow).unwrap();
        assert_eq!(x_app.dim(), (2, 3, 96));
        assert_eq!(x_flow.unwrap().dim(), (2, 3, 96));
    }

    #[test]
    fn indivisible_input_is_rejected() {
        let mut r = rng();
        let enc: Encoder<f64> = Encoder::new(&[8, 16], true, &mut r);
        let image = random_map(&mut r, 10, 12, 3);
        let flow = random_map(&mut r, 10, 12, 3);
        assert!(enc.forward(&image, &flow).is_err());
    }

    #[test]
    fn canonical_names_index_from_one() {
        let mut r = rng();
        let enc: Encoder<f64> = Encoder::new(&[4, 8], true, &mut r);
        let names: Vec<String> = enc.tensors().into_iter().map(|(n, _)| n).collect();
        assert!(names.contains(&"en_s.app.stage1.conv.w".to_string()));
        assert!(names.contains(&"en_s.flow.stage2.conv.b".to_string()));
        assert_eq!(names.len(), 8);
    }

    #[test]
    fn target_copy_is_independent() {
        let mut r = rng();
        let src: Encoder<f64> = Encoder::new(&[4, 8], true, &mut r);
        let before = crate::nn::param_checksum(&src);
        let mut tgt = init_target_encoder(&src);
        assert_eq!(crate::nn::param_checksum(&tgt), before);
        tgt.app.stages[0].w[(0, 0, 0, 0)] += 1.0;
        assert_eq!(crate::nn::param_checksum(&src), before);
        assert_ne!(crate::nn::param_checksum(&tgt), before);
    }

    #[test]
    fn branch_gradients_match_finite_differences() {
        let mut r = rng();
        let branch: BranchEncoder<f64> = BranchEncoder::new(2, &[3, 4], &mut r);
        let x = random_map(&mut r, 8, 8, 2);
        let (y, trace) = branch.forward(&x);
        let dy = Array3::from_elem(y.dim(), 1.0);
        let mut grads = branch.zeroed();
        branch.backward(&trace, &dy, &mut grads);

        let h = 1e-5;
        for (si, idx) in [(0, (1, 2, 1, 2)), (1, (0, 0, 2, 3))] {
            let mut plus = branch.clone();
            let mut minus = branch.clone();
            plus.stages[si].w[idx] += h;
            minus.stages[si].w[idx] -= h;
            let fp: f64 = plus.forward(&x).0.sum();
            let fm: f64 = minus.forward(&x).0.sum();
            let fd = (fp - fm) / (2.0 * h);
            let an = grads.stages[si].w[idx];
            assert!(
                (fd - an).abs() <= 1e-3 * fd.abs().max(1.0),
                "stage {si}: fd {fd} vs autodiff {an}"
            );
        }
    }
}
