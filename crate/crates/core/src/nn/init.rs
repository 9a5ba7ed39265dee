use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Conv2d, Dense, Scalar};

/// Deterministic parameter-initialization stream.
///
/// All weight draws go through one of these so that a fixed seed yields
/// bit-identical parameters across runs and platforms. Normal variates are
/// produced in f64 and narrowed at the assignment site, keeping f32 and f64
/// instantiations of the same model in close agreement.
pub struct InitRng {
    rng: ChaCha8Rng,
}

impl InitRng {
    pub fn new(seed: u64) -> Self {
        InitRng { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Standard-normal draw via Box–Muller (no cached spare; one draw per
    /// call keeps the stream position a pure function of the call count).
    pub fn normal(&mut self) -> f64 {
        let u1: f64 = self.rng.random::<f64>().max(f64::MIN_POSITIVE);
        let u2: f64 = self.rng.random();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Normal draw scaled for ReLU fan-in (He initialization).
    pub fn he(&mut self, fan_in: usize) -> f64 {
        self.normal() * (2.0 / fan_in as f64).sqrt()
    }
}

/// He-initializes a convolution in place; biases stay zero.
pub fn init_conv<T: Scalar>(layer: &mut Conv2d<T>, rng: &mut InitRng) {
    let (kh, kw, cin, _) = layer.w.dim();
    let fan_in = kh * kw * cin;
    for v in layer.w.iter_mut() {
        *v = T::from_f64(rng.he(fan_in));
    }
}

/// He-initializes a dense layer in place; biases stay zero.
pub fn init_dense<T: Scalar>(layer: &mut Dense<T>, rng: &mut InitRng) {
    let fan_in = layer.w.dim().0;
    for v in layer.w.iter_mut() {
        *v = T::from_f64(rng.he(fan_in));
    }
}
