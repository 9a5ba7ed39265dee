use super::Scalar;
use ndarray::{Array1, Array2};

/// Fully-connected map from a channel vector to a smaller one; used as the
/// discriminator head after global pooling.
#[derive(Debug, Clone)]
pub struct Dense<T> {
    /// (in, out)
    pub w: Array2<T>,
    pub b: Array1<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn zeros(c_in: usize, c_out: usize) -> Self {
        Dense {
            w: Array2::zeros((c_in, c_out)),
            b: Array1::zeros(c_out),
        }
    }

    pub fn forward(&self, x: &Array1<T>) -> Array1<T> {
        let (c_in, c_out) = self.w.dim();
        assert_eq!(x.len(), c_in, "dense input length");
        let mut out = self.b.clone();
        for i in 0..c_in {
            let xv = x[i];
            for o in 0..c_out {
                out[o] += xv * self.w[(i, o)];
            }
        }
        out
    }

    pub fn backward(
        &self,
        x: &Array1<T>,
        dy: &Array1<T>,
        gw: &mut Array2<T>,
        gb: &mut Array1<T>,
    ) -> Array1<T> {
        let (c_in, c_out) = self.w.dim();
        let mut dx = Array1::zeros(c_in);
        for o in 0..c_out {
            gb[o] += dy[o];
        }
        for i in 0..c_in {
            let mut acc = T::zero();
            for o in 0..c_out {
                acc += self.w[(i, o)] * dy[o];
                gw[(i, o)] += x[i] * dy[o];
            }
            dx[i] = acc;
        }
        dx
    }
}
