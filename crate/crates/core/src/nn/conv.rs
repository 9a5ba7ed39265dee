use super::{Map, Scalar};
use ndarray::{Array1, Array3, Array4};

/// 2-D convolution over (H, W, C) maps with zero padding.
///
/// Weight layout is (kh, kw, c_in, c_out) so the innermost loop runs over
/// output channels on contiguous memory.
#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub w: Array4<T>,
    pub b: Array1<T>,
    pub stride: usize,
    pub pad: usize,
}

impl<T: Scalar> Conv2d<T> {
    pub fn zeros(kh: usize, kw: usize, c_in: usize, c_out: usize, stride: usize, pad: usize) -> Self {
        Conv2d {
            w: Array4::zeros((kh, kw, c_in, c_out)),
            b: Array1::zeros(c_out),
            stride,
            pad,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.w.dim().2
    }

    pub fn out_channels(&self) -> usize {
        self.w.dim().3
    }

    pub fn out_spatial(&self, h: usize, w: usize) -> (usize, usize) {
        let (kh, kw, _, _) = self.w.dim();
        (
            conv_out_dim(h, kh, self.stride, self.pad),
            conv_out_dim(w, kw, self.stride, self.pad),
        )
    }

    pub fn forward(&self, x: &Map<T>) -> Map<T> {
        let (h, w, c_in) = x.dim();
        let (kh, kw, wc_in, c_out) = self.w.dim();
        assert_eq!(c_in, wc_in, "conv input channels");
        let (oh, ow) = self.out_spatial(h, w);
        let mut out = Array3::zeros((oh, ow, c_out));

        let xs = x.as_slice().expect("standard layout");
        let ws = self.w.as_slice().expect("standard layout");
        let bs = self.b.as_slice().expect("standard layout");
        let os = out.as_slice_mut().expect("standard layout");

        let mut acc = vec![T::zero(); c_out];
        for oy in 0..oh {
            for ox in 0..ow {
                acc.copy_from_slice(bs);
                for ky in 0..kh {
                    let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..kw {
                        let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let xbase = (iy as usize * w + ix as usize) * c_in;
                        let wbase = (ky * kw + kx) * c_in * c_out;
                        for ci in 0..c_in {
                            let xv = xs[xbase + ci];
                            let wrow = &ws[wbase + ci * c_out..wbase + (ci + 1) * c_out];
                            for (a, &wv) in acc.iter_mut().zip(wrow) {
                                *a += xv * wv;
                            }
                        }
                    }
                }
                let obase = (oy * ow + ox) * c_out;
                os[obase..obase + c_out].copy_from_slice(&acc);
            }
        }
        out
    }

    /// Backward pass: given the layer input and the loss gradient at the
    /// output, accumulates parameter gradients into `gw`/`gb` and returns the
    /// gradient at the input.
    pub fn backward(
        &self,
        x: &Map<T>,
        dy: &Map<T>,
        gw: &mut Array4<T>,
        gb: &mut Array1<T>,
    ) -> Map<T> {
        let (h, w, c_in) = x.dim();
        let (kh, kw, _, c_out) = self.w.dim();
        let (oh, ow) = self.out_spatial(h, w);
        assert_eq!(dy.dim(), (oh, ow, c_out), "conv dy shape");
        assert_eq!(gw.dim(), self.w.dim());

        let mut dx = Array3::zeros((h, w, c_in));
        let xs = x.as_slice().expect("standard layout");
        let ws = self.w.as_slice().expect("standard layout");
        let dys = dy.as_slice().expect("standard layout");
        let dxs = dx.as_slice_mut().expect("standard layout");
        let gws = gw.as_slice_mut().expect("standard layout");
        let gbs = gb.as_slice_mut().expect("standard layout");

        for oy in 0..oh {
            for ox in 0..ow {
                let obase = (oy * ow + ox) * c_out;
                let dyv = &dys[obase..obase + c_out];
                for (g, &d) in gbs.iter_mut().zip(dyv) {
                    *g += d;
                }
                for ky in 0..kh {
                    let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..kw {
                        let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let xbase = (iy as usize * w + ix as usize) * c_in;
                        let wbase = (ky * kw + kx) * c_in * c_out;
                        for ci in 0..c_in {
                            let xv = xs[xbase + ci];
                            let wrow = &ws[wbase + ci * c_out..wbase + (ci + 1) * c_out];
                            let grow = &mut gws[wbase + ci * c_out..wbase + (ci + 1) * c_out];
                            let mut acc = T::zero();
                            for co in 0..c_out {
                                let d = dyv[co];
                                acc += wrow[co] * d;
                                grow[co] += xv * d;
                            }
                            dxs[xbase + ci] += acc;
                        }
                    }
                }
            }
        }
        dx
    }
}

pub fn conv_out_dim(n: usize, k: usize, stride: usize, pad: usize) -> usize {
    assert!(n + 2 * pad >= k, "conv input smaller than kernel");
    (n + 2 * pad - k) / stride + 1
}
