use super::{Map, Scalar};
use ndarray::{Array1, Array3};

/// Element-wise rectified linear unit.
pub fn relu<T: Scalar>(x: &Map<T>) -> Map<T> {
    x.mapv(|v| if v > T::zero() { v } else { T::zero() })
}

/// ReLU gradient gated on the forward *output* (`y > 0` iff the pre-activation
/// was positive).
pub fn relu_backward<T: Scalar>(y: &Map<T>, dy: &Map<T>) -> Map<T> {
    debug_assert_eq!(y.dim(), dy.dim());
    let mut dx = dy.clone();
    let ys = y.as_slice().expect("standard layout");
    let ds = dx.as_slice_mut().expect("standard layout");
    for (d, &yv) in ds.iter_mut().zip(ys) {
        if yv <= T::zero() {
            *d = T::zero();
        }
    }
    dx
}

/// Numerically stable logistic squashing into (0, 1).
pub fn sigmoid_scalar<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Scalar>(x: &Map<T>) -> Map<T> {
    x.mapv(sigmoid_scalar)
}

/// Sigmoid gradient expressed through the forward output: dz = dy · y(1−y).
pub fn sigmoid_backward<T: Scalar>(y: &Map<T>, dy: &Map<T>) -> Map<T> {
    debug_assert_eq!(y.dim(), dy.dim());
    let mut dx = dy.clone();
    let ys = y.as_slice().expect("standard layout");
    let ds = dx.as_slice_mut().expect("standard layout");
    for (d, &yv) in ds.iter_mut().zip(ys) {
        *d = *d * yv * (T::one() - yv);
    }
    dx
}

/// Source taps for 2x bilinear upsampling (half-pixel centers): output index
/// `o` samples input indices `i0`,`i1` with weights `w0`,`1−w0`.
fn up2_taps(o: usize, n: usize) -> (usize, usize, f64) {
    let k = o / 2;
    if o.is_multiple_of(2) {
        (k.saturating_sub(1), k, 0.25)
    } else {
        (k, (k + 1).min(n - 1), 0.75)
    }
}

/// Bilinear 2x upsampling: (h, w, c) -> (2h, 2w, c).
pub fn upsample2x<T: Scalar>(x: &Map<T>) -> Map<T> {
    let (h, w, c) = x.dim();
    let mut out = Array3::zeros((2 * h, 2 * w, c));
    let xs = x.as_slice().expect("standard layout");
    let os = out.as_slice_mut().expect("standard layout");
    for oy in 0..2 * h {
        let (y0, y1, wy0) = up2_taps(oy, h);
        let wy0 = T::from_f64(wy0);
        let wy1 = T::one() - wy0;
        for ox in 0..2 * w {
            let (x0, x1, wx0) = up2_taps(ox, w);
            let wx0 = T::from_f64(wx0);
            let wx1 = T::one() - wx0;
            let b00 = (y0 * w + x0) * c;
            let b01 = (y0 * w + x1) * c;
            let b10 = (y1 * w + x0) * c;
            let b11 = (y1 * w + x1) * c;
            let obase = (oy * 2 * w + ox) * c;
            for ch in 0..c {
                os[obase + ch] = wy0 * (wx0 * xs[b00 + ch] + wx1 * xs[b01 + ch])
                    + wy1 * (wx0 * xs[b10 + ch] + wx1 * xs[b11 + ch]);
            }
        }
    }
    out
}

/// Transpose of [`upsample2x`]: scatters the output gradient back onto the
/// input grid with the same interpolation weights.
pub fn upsample2x_backward<T: Scalar>(dy: &Map<T>, in_h: usize, in_w: usize) -> Map<T> {
    let (oh, ow, c) = dy.dim();
    assert_eq!((oh, ow), (2 * in_h, 2 * in_w), "upsample2x dy shape");
    let mut dx = Array3::zeros((in_h, in_w, c));
    let dys = dy.as_slice().expect("standard layout");
    let dxs = dx.as_slice_mut().expect("standard layout");
    for oy in 0..oh {
        let (y0, y1, wy0) = up2_taps(oy, in_h);
        let wy0 = T::from_f64(wy0);
        let wy1 = T::one() - wy0;
        for ox in 0..ow {
            let (x0, x1, wx0) = up2_taps(ox, in_w);
            let wx0 = T::from_f64(wx0);
            let wx1 = T::one() - wx0;
            let obase = (oy * ow + ox) * c;
            for ch in 0..c {
                let d = dys[obase + ch];
                dxs[(y0 * in_w + x0) * c + ch] += wy0 * wx0 * d;
                dxs[(y0 * in_w + x1) * c + ch] += wy0 * wx1 * d;
                dxs[(y1 * in_w + x0) * c + ch] += wy1 * wx0 * d;
                dxs[(y1 * in_w + x1) * c + ch] += wy1 * wx1 * d;
            }
        }
    }
    dx
}

/// Reflection index for padding: triangle wave over [0, n).
fn reflect_index(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * n - 2;
    let j = i % period;
    if j < n {
        j
    } else {
        period - j
    }
}

/// Reflect-pads the bottom/right of a map up to `(th, tw)`.
pub fn pad_reflect<T: Scalar>(x: &Map<T>, th: usize, tw: usize) -> Map<T> {
    let (h, w, c) = x.dim();
    assert!(th >= h && tw >= w, "pad target smaller than input");
    Array3::from_shape_fn((th, tw, c), |(y, xx, ch)| {
        x[(reflect_index(y, h), reflect_index(xx, w), ch)]
    })
}

/// Crops the top-left `(h, w)` window out of a map.
pub fn crop_map<T: Scalar>(x: &Map<T>, h: usize, w: usize) -> Map<T> {
    let (xh, xw, _) = x.dim();
    assert!(h <= xh && w <= xw, "crop larger than input");
    x.slice(ndarray::s![..h, ..w, ..]).to_owned()
}

/// Mean over the spatial grid, per channel.
pub fn global_avg_pool<T: Scalar>(x: &Map<T>) -> Array1<T> {
    let (h, w, c) = x.dim();
    let norm = T::from_f64(1.0 / (h * w) as f64);
    let mut out = Array1::zeros(c);
    for row in x.rows() {
        for (o, &v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    out.mapv_inplace(|v| v * norm);
    out
}

pub fn global_avg_pool_backward<T: Scalar>(dy: &Array1<T>, h: usize, w: usize) -> Map<T> {
    let c = dy.len();
    let norm = T::from_f64(1.0 / (h * w) as f64);
    Array3::from_shape_fn((h, w, c), |(_, _, ch)| dy[ch] * norm)
}
