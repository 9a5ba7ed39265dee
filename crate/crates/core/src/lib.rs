//! Desk-scale training and evaluation laboratory for two-stream video object
//! segmentation with adversarial unsupervised domain adaptation.
//!
//! The crate is organized around six subsystems:
//!
//! * [`nn`] — the differentiable building blocks (convolution, bilinear
//!   upsampling, activations) with hand-written forward/backward passes,
//!   generic over `f32`/`f64`.
//! * [`datasets`] — synthetic sequence generation with exact ground-truth
//!   flow, DAVIS-style directory ingestion, the Middlebury `.flo` codec,
//!   and the augmentation pipeline.
//! * [`model`] — dual-branch encoder, fusion layer, main and flow decoders,
//!   and the domain discriminator.
//! * [`losses`] — the supervised and adversarial loss quantities as pure
//!   scalar functions.
//! * [`training`] — SGD with momentum, schedules, and the three optimization
//!   regimes (supervised, weights-shared UDA, weights-separated UDA).
//! * [`metrics`] — region similarity J and boundary accuracy F with DAVIS
//!   style mean/recall/decay aggregation.

pub mod datasets;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod training;

/// Shape mismatch between interacting tensors, carrying a human-readable
/// description of the offending dimensions.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("shape error: {0}")]
pub struct ShapeError(pub String);

impl ShapeError {
    pub fn new(msg: impl Into<String>) -> Self {
        ShapeError(msg.into())
    }
}
