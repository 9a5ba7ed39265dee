use ndarray::Array1;

use crate::nn::{
    global_avg_pool, global_avg_pool_backward, init_conv, init_dense, push_conv, push_conv_mut,
    push_dense, push_dense_mut, relu, relu_backward, sigmoid_scalar, Conv2d, Dense, InitRng, Map,
    ParamSet, ParamTensor, ParamTensorMut, Scalar,
};

/// The domain discriminator `D`: a small fully-convolutional stack over the
/// fused feature map, global average pooling, and a linear head squashed to
/// one probability per sample. Training convention: source features are
/// labeled 1, target features 0.
#[derive(Clone)]
pub struct Discriminator<T: Scalar> {
    pub convs: Vec<Conv2d<T>>,
    pub head: Dense<T>,
}

/// Intermediates retained from one sample's forward pass.
pub struct DiscriminatorTrace<T: Scalar> {
    conv_inputs: Vec<Map<T>>,
    conv_relu: Vec<Map<T>>,
    pooled: Array1<T>,
    prob: T,
}

impl<T: Scalar> DiscriminatorTrace<T> {
    pub fn prob(&self) -> T {
        self.prob
    }
}

impl<T: Scalar> Discriminator<T> {
    pub fn new(in_channels: usize, widths: &[usize], rng: &mut InitRng) -> Self {
        let mut convs = Vec::with_capacity(widths.len());
        let mut c_in = in_channels;
        for &c_out in widths {
            let mut conv = Conv2d::zeros(3, 3, c_in, c_out, 2, 1);
            init_conv(&mut conv, rng);
            convs.push(conv);
            c_in = c_out;
        }
        let mut head = Dense::zeros(c_in, 1);
        init_dense(&mut head, rng);
        Discriminator { convs, head }
    }

    /// Judges one feature map; returns the probability that it came from the
    /// source domain, always strictly inside (0, 1) for finite inputs.
    pub fn forward(&self, x: &Map<T>) -> (T, DiscriminatorTrace<T>) {
        let mut conv_inputs = Vec::with_capacity(self.convs.len());
        let mut conv_relu = Vec::with_capacity(self.convs.len());
        let mut cur = x.clone();
        for conv in &self.convs {
            let r = relu(&conv.forward(&cur));
            conv_inputs.push(cur);
            conv_relu.push(r.clone());
            cur = r;
        }
        let pooled = global_avg_pool(&cur);
        let logit = self.head.forward(&pooled)[0];
        let prob = sigmoid_scalar(logit);
        (prob, DiscriminatorTrace { conv_inputs, conv_relu, pooled, prob })
    }

    /// Backpropagates a gradient on the output probability. Returns the
    /// gradient with respect to the input feature map (the adversarial path
    /// into the encoder) and accumulates parameter gradients into `grads`.
    pub fn backward(
        &self,
        trace: &DiscriminatorTrace<T>,
        dprob: T,
        grads: &mut Self,
    ) -> Map<T> {
        let dlogit = dprob * trace.prob * (T::one() - trace.prob);
        let dpooled = self.head.backward(
            &trace.pooled,
            &Array1::from_elem(1, dlogit),
            &mut grads.head.w,
            &mut grads.head.b,
        );
        let last = trace.conv_relu.last().expect("at least one conv");
        let (h, w, _) = last.dim();
        let mut dcur = global_avg_pool_backward(&dpooled, h, w);
        for i in (0..self.convs.len()).rev() {
            let dr = relu_backward(&trace.conv_relu[i], &dcur);
            let g = &mut grads.convs[i];
            dcur = self.convs[i].backward(&trace.conv_inputs[i], &dr, &mut g.w, &mut g.b);
        }
        dcur
    }
}

impl<T: Scalar> ParamSet<T> for Discriminator<T> {
    fn tensors(&self) -> Vec<ParamTensor<'_, T>> {
        let mut out = Vec::new();
        for (i, conv) in self.convs.iter().enumerate() {
            push_conv(&format!("disc.conv{}", i + 1), conv, &mut out);
        }
        push_dense("disc.head", &self.head, &mut out);
        out
    }

    fn tensors_mut(&mut self) -> Vec<ParamTensorMut<'_, T>> {
        let mut out = Vec::new();
        for (i, conv) in self.convs.iter_mut().enumerate() {
            push_conv_mut(&format!("disc.conv{}", i + 1), conv, &mut out);
        }
        push_dense_mut("disc.head", &mut self.head, &mut out);
        out
    }
}
