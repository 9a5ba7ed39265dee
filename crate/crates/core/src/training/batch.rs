use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::TrainError;
use crate::datasets::{
    apply_augment, draw_augment_params, normalize_flow, pad_flow_channels, FrameSample,
};
use crate::nn::Map;

/// One frame prepared for the network: augmented image, normalized
/// 3-channel flow, and (for labeled frames) the matching mask crop.
pub struct TrainExample {
    pub image: Map<f32>,
    pub flow3: Map<f32>,
    pub mask: Option<Map<f32>>,
}

/// Splitmix-style mixer chaining a root seed with context tags (stream id,
/// epoch, round). Every RNG in a run is derived this way, so resuming at an
/// epoch boundary reproduces the exact remaining random stream.
pub fn derive_seed(root: u64, tags: &[u64]) -> u64 {
    let mut z = root;
    for &tag in tags {
        z = z.wrapping_add(0x9e3779b97f4a7c15).wrapping_add(tag);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^= z >> 31;
    }
    z
}

/// Number of batches in one full pass over `n` samples (last batch may be
/// partial).
pub fn batches_per_pass(n: usize, batch_size: usize) -> usize {
    n.div_ceil(batch_size)
}

/// A deterministic index stream over one dataset: each pass visits every
/// index once in an epoch-and-round-seeded shuffle, and the stream renews
/// itself when exhausted so consumers can draw any number of batches.
pub struct BatchStream {
    n: usize,
    batch_size: usize,
    seed: u64,
    stream: u64,
    epoch: u64,
    round: u64,
    order: Vec<usize>,
    cursor: usize,
}

impl BatchStream {
    pub fn new(n: usize, batch_size: usize, seed: u64, stream: u64) -> Self {
        assert!(n > 0, "cannot batch an empty dataset");
        let mut s = BatchStream {
            n,
            batch_size: batch_size.max(1),
            seed,
            stream,
            epoch: 0,
            round: 0,
            order: Vec::new(),
            cursor: 0,
        };
        s.reshuffle();
        s
    }

    /// Re-anchors the stream at an epoch boundary; the shuffle depends only
    /// on (seed, stream, epoch, round), never on prior consumption.
    pub fn start_epoch(&mut self, epoch: u64) {
        self.epoch = epoch;
        self.round = 0;
        self.reshuffle();
    }

    fn reshuffle(&mut self) {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
            self.seed,
            &[self.stream, self.epoch, self.round],
        ));
        self.order = (0..self.n).collect();
        self.order.shuffle(&mut rng);
        self.cursor = 0;
    }

    /// Next batch of indices; shorter than `batch_size` only at the end of
    /// a pass.
    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.cursor >= self.n {
            self.round += 1;
            self.reshuffle();
        }
        let end = (self.cursor + self.batch_size).min(self.n);
        let out = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        out
    }
}

/// Augments one frame and converts it to network inputs: seeded crop /
/// flip / photometric jitter, then flow normalization and channel padding.
pub fn training_example(
    sample: &FrameSample,
    crop: usize,
    flow_scale: f32,
    jitter: bool,
    rng: &mut ChaCha8Rng,
) -> Result<TrainExample, TrainError> {
    let (h, w, _) = sample.image.dim();
    let params = draw_augment_params(h, w, crop, jitter, rng)?;
    let out = apply_augment(sample, &params);
    let flow3 = pad_flow_channels(&normalize_flow(&out.flow, flow_scale));
    Ok(TrainExample { image: out.image, flow3, mask: out.mask })
}

/// Prepares a whole batch by index list. Every sample consumes the same
/// number of RNG draws, so batch composition and augmentation stay aligned
/// across reruns.
pub fn make_examples(
    samples: &[FrameSample],
    idx: &[usize],
    crop: usize,
    flow_scale: f32,
    jitter: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<TrainExample>, TrainError> {
    idx.iter()
        .map(|&i| training_example(&samples[i], crop, flow_scale, jitter, rng))
        .collect()
}
