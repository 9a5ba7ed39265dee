//! Data plumbing: the Middlebury `.flo` flow codec, synthetic sequence
//! generation with exact analytic ground truth, DAVIS-style directory
//! ingestion, and the augmentation pipeline.
//!
//! A dataset — synthetic or on disk — is consumed as [`FrameSample`]s: one
//! RGB frame, the dense flow from its predecessor, and (for labeled source
//! data) a binary mask. Frame 0 of any sequence is only a flow anchor and
//! never becomes a sample.

mod augment;
mod davis;
mod flo;
mod synth;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::nn::Map;

pub use augment::{
    apply_augment, augment, draw_augment_params, normalize_flow, pad_flow_channels,
    AugmentParams,
};
pub use davis::{load_davis_layout, DatasetHandle, FrameEntry, SequenceEntry};
pub use flo::{read_flo, write_flo, FLO_MAGIC};
pub use synth::{
    generate_synthetic_sequence, materialize_sequences, render_sequence, AppearanceStyle,
    ShapeKind, SyntheticSequence, SyntheticSpec,
};

/// Which side of the adaptation gap a sample belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    /// Labeled domain: masks available for supervision.
    Source,
    /// Unlabeled domain: masks must never be read during training.
    Target,
}

/// Dataset split selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn file_stem(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// One usable timestep of a sequence.
#[derive(Debug, Clone)]
pub struct FrameSample {
    /// RGB frame, `(h, w, 3)`, values in [0, 1].
    pub image: Map<f32>,
    /// Dense displacement from frame `t-1` to `t`, `(h, w, 2)`: channel 0 is
    /// horizontal `u`, channel 1 vertical `v`, in pixels/frame. Content at
    /// pixel `p` of this frame came from `p - flow(p)` in the previous one.
    pub flow: Map<f32>,
    /// Binary mask `(h, w, 1)` with values exactly 0 or 1; `None` on
    /// unlabeled (target-domain) samples.
    pub mask: Option<Map<f32>>,
    pub sequence_id: String,
    /// Index of the frame within its sequence; always ≥ 1 because flow pairs
    /// the frame with its predecessor.
    pub frame_index: usize,
    pub domain: Domain,
}

impl FrameSample {
    /// Enforces the documented invariants; used by tests and after loading.
    pub fn validate(&self) -> Result<(), DataError> {
        let (h, w, c) = self.image.dim();
        if c != 3 {
            return Err(DataError::Malformed(format!("image has {c} channels")));
        }
        if self.flow.dim() != (h, w, 2) {
            return Err(DataError::Malformed(format!(
                "flow {:?} does not match image {h}x{w}",
                self.flow.dim()
            )));
        }
        if self.frame_index < 1 {
            return Err(DataError::Malformed("frame_index must be >= 1".into()));
        }
        if self.image.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(DataError::Malformed("image values outside [0,1]".into()));
        }
        if self.flow.iter().any(|v| !v.is_finite()) {
            return Err(DataError::Malformed("non-finite flow".into()));
        }
        if let Some(mask) = &self.mask {
            if mask.dim() != (h, w, 1) {
                return Err(DataError::Malformed(format!(
                    "mask {:?} does not match image {h}x{w}",
                    mask.dim()
                )));
            }
            if mask.iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(DataError::Malformed("mask values must be exactly 0 or 1".into()));
            }
        }
        Ok(())
    }
}

/// Everything that can go wrong while producing or consuming data.
#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("flow magic mismatch: got {0}, expected {FLO_MAGIC}")]
    MagicMismatch(f32),
    #[error("truncated flow file: expected {expected} bytes, found {found}")]
    TruncatedFile { expected: usize, found: usize },
    #[error("bad flow header: {0}")]
    BadHeader(String),
    #[error("non-finite flow value at pixel ({0}, {1})")]
    NonFiniteFlow(usize, usize),
    #[error("io failure on {path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid synthetic spec: {0}")]
    SpecInvalid(String),
    #[error("dataset layout error: missing {0}")]
    LayoutError(String),
    #[error("count mismatch in sequence {sequence}: {detail}")]
    CountMismatch { sequence: String, detail: String },
    #[error("crop {crop} exceeds sample {h}x{w}")]
    CropTooLarge { crop: usize, h: usize, w: usize },
    #[error("malformed sample: {0}")]
    Malformed(String),
    #[error("image codec error on {path}: {source}")]
    ImageCodec {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl DataError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DataError::IoFailure { path: path.into(), source }
    }

    pub(crate) fn codec(path: impl Into<PathBuf>, source: image::ImageError) -> Self {
        DataError::ImageCodec { path: path.into(), source }
    }
}
