use ndarray::Array3;
use rand::Rng;

use super::{DataError, FrameSample};
use crate::nn::Map;

/// A sampled augmentation, reusable across the image / flow / mask of one
/// frame so all three stay geometrically aligned.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentParams {
    pub y0: usize,
    pub x0: usize,
    pub crop: usize,
    pub flip: bool,
    /// Per-channel photometric gain, applied to the image only.
    pub gain: [f32; 3],
    /// Per-channel photometric bias, applied to the image only.
    pub bias: [f32; 3],
}

impl AugmentParams {
    /// The identity augmentation for a full `crop`×`crop` frame.
    pub fn identity(crop: usize) -> Self {
        AugmentParams { y0: 0, x0: 0, crop, flip: false, gain: [1.0; 3], bias: [0.0; 3] }
    }
}

/// Draws a random square crop window, a horizontal-flip coin, and (when
/// `jitter` is set) per-channel photometric gain/bias. The draw order is
/// fixed — flip, y0, x0, gains, biases — so a seeded RNG reproduces the
/// same augmentation stream across runs.
pub fn draw_augment_params<R: Rng>(
    h: usize,
    w: usize,
    crop: usize,
    jitter: bool,
    rng: &mut R,
) -> Result<AugmentParams, DataError> {
    if crop == 0 || crop > h || crop > w {
        return Err(DataError::CropTooLarge { crop, h, w });
    }
    let flip = rng.random_bool(0.5);
    let y0 = rng.random_range(0..=h - crop);
    let x0 = rng.random_range(0..=w - crop);
    let mut gain = [1.0f32; 3];
    let mut bias = [0.0f32; 3];
    if jitter {
        for g in &mut gain {
            *g = rng.random_range(0.8..=1.2);
        }
        for b in &mut bias {
            *b = rng.random_range(-0.1..=0.1);
        }
    }
    Ok(AugmentParams { y0, x0, crop, flip, gain, bias })
}

/// Applies one augmentation to a sample. Crop and flip act identically on
/// image, flow, and mask; a flip also negates the horizontal flow component
/// (mirrored motion points the other way); photometric jitter touches the
/// image only and clamps back to [0, 1].
pub fn apply_augment(sample: &FrameSample, p: &AugmentParams) -> FrameSample {
    let image = window(&sample.image, p, |c, v| {
        if c < 3 {
            (v * p.gain[c] + p.bias[c]).clamp(0.0, 1.0)
        } else {
            v
        }
    });
    let flow = window(&sample.flow, p, |c, v| {
        if p.flip && c == 0 {
            -v
        } else {
            v
        }
    });
    let mask = sample.mask.as_ref().map(|m| window(m, p, |_, v| v));
    FrameSample {
        image,
        flow,
        mask,
        sequence_id: sample.sequence_id.clone(),
        frame_index: sample.frame_index,
        domain: sample.domain,
    }
}

/// Crops (and optionally mirrors) one map, with a per-channel value hook.
fn window(map: &Map<f32>, p: &AugmentParams, f: impl Fn(usize, f32) -> f32) -> Map<f32> {
    let (_, _, channels) = map.dim();
    Array3::from_shape_fn((p.crop, p.crop, channels), |(y, x, c)| {
        let sx = if p.flip { p.x0 + p.crop - 1 - x } else { p.x0 + x };
        f(c, map[(p.y0 + y, sx, c)])
    })
}

/// Draws parameters and applies them in one step — the common training path.
pub fn augment<R: Rng>(
    sample: &FrameSample,
    crop: usize,
    rng: &mut R,
) -> Result<FrameSample, DataError> {
    let (h, w, _) = sample.image.dim();
    let p = draw_augment_params(h, w, crop, true, rng)?;
    Ok(apply_augment(sample, &p))
}

/// Pads a 2-channel flow field to 3 channels so it can enter an RGB-shaped
/// branch; the third channel is all ones.
pub fn pad_flow_channels(flow: &Map<f32>) -> Map<f32> {
    let (h, w, c) = flow.dim();
    debug_assert_eq!(c, 2, "flow maps carry (u, v)");
    Array3::from_shape_fn((h, w, 3), |(y, x, ch)| if ch < c { flow[(y, x, ch)] } else { 1.0 })
}

/// Scales flow values into a range comparable with image intensities; the
/// trainer uses `crop / 20` pixels as the unit displacement.
pub fn normalize_flow(flow: &Map<f32>, scale: f32) -> Map<f32> {
    flow.mapv(|v| v / scale)
}
