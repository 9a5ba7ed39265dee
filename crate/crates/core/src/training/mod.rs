//! The three optimization procedures — supervised source training,
//! weights-shared joint adaptation, and weights-separated post-hoc
//! adaptation with M/N alternation — plus the optimizer, schedules,
//! batching, history, and checkpointing they share.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datasets::DataError;
use crate::losses::LossWeights;
use crate::model::ModelConfig;
use crate::ShapeError;

mod batch;
mod checkpoint;
mod history;
mod optim;
mod supervised;
mod uda;

pub use batch::{batches_per_pass, derive_seed, BatchStream, TrainExample};
pub use checkpoint::{
    extract_params, insert_params, load_checkpoint, save_checkpoint, Checkpoint,
    CHECKPOINT_FILE,
};
pub use history::{StepRecord, TrainHistory, ValRecord};
pub use optim::{lambda1_schedule, lr_schedule, sgd_step, Sgd};
pub use supervised::{validation_j, SupervisedTrainer};
pub use uda::{SeparatedUdaTrainer, SharedUdaTrainer};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("non-finite gradient in {name}")]
    NonFiniteGradient { name: String },
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: u64 },
    #[error("supervised batch contains an unlabeled frame from {sequence}")]
    MissingLabel { sequence: String },
    #[error("checkpoint not found at {0}")]
    MissingCheckpoint(PathBuf),
    #[error("checkpoint fingerprint {found} does not match configured model {expected}")]
    FingerprintMismatch { expected: String, found: String },
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("failed writing {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Shape(#[from] ShapeError),
}

/// Which of the three optimization procedures a run executes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Supervised,
    UdaShared,
    UdaSeparated,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Regime::Supervised => "supervised",
            Regime::UdaShared => "uda_shared",
            Regime::UdaSeparated => "uda_separated",
        };
        f.write_str(s)
    }
}

/// Full description of one training run. Every field has a default, so a
/// run config file only needs to state what it changes.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub regime: Regime,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Multiplicative learning-rate decay applied once per epoch.
    pub lr_decay: f64,
    /// Momentum of the discriminator's own optimizer.
    pub disc_momentum: f64,
    /// Encoder iterations per alternation block (separated adaptation).
    pub m: usize,
    /// Discriminator iterations per alternation block (separated adaptation).
    pub n: usize,
    /// Square crop side for training batches; must be a multiple of the
    /// encoder stride.
    pub crop: usize,
    pub seed: u64,
    /// Kept for the run manifest: this implementation is single-threaded
    /// and seeded everywhere, so runs are always deterministic.
    pub deterministic: bool,
    pub weights: LossWeights,
    pub model: ModelConfig,
    pub source_root: Option<PathBuf>,
    pub target_root: Option<PathBuf>,
    /// Optional supervised checkpoint to start a shared-adaptation run from.
    pub warm_start: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            regime: Regime::Supervised,
            epochs: 100,
            batch_size: 8,
            learning_rate: 0.004,
            momentum: 0.9,
            weight_decay: 1e-4,
            lr_decay: 0.97,
            disc_momentum: 0.0,
            m: 5,
            n: 5,
            crop: 48,
            seed: 0,
            deterministic: true,
            weights: LossWeights::default(),
            model: ModelConfig::default(),
            source_root: None,
            target_root: None,
            warm_start: None,
        }
    }
}

impl TrainConfig {
    /// Defaults for an adaptation run: smaller learning rate, shorter
    /// schedule, M = N = 5.
    pub fn uda_defaults(regime: Regime) -> Self {
        TrainConfig { regime, epochs: 20, learning_rate: 1e-4, ..TrainConfig::default() }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: String| Err(TrainError::InvalidConfig(msg));
        self.model.validate().map_err(TrainError::InvalidConfig)?;
        self.weights.validate().map_err(TrainError::InvalidConfig)?;
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) || !(0.0..1.0).contains(&self.disc_momentum) {
            return bad("momentum must lie in [0, 1)".into());
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad("weight_decay must be nonnegative".into());
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad(format!("lr_decay {} must lie in (0, 1]", self.lr_decay));
        }
        let stride = self.model.stride();
        if self.crop == 0 || !self.crop.is_multiple_of(stride) {
            return bad(format!(
                "crop {} must be a positive multiple of the encoder stride {stride}",
                self.crop
            ));
        }
        if self.regime == Regime::UdaSeparated && (self.m == 0 || self.n == 0) {
            return bad("separated adaptation needs M >= 1 and N >= 1".into());
        }
        Ok(())
    }

    /// Divisor that maps raw pixel displacements into roughly unit range
    /// before the flow enters the network.
    pub fn flow_scale(&self) -> f32 {
        self.crop as f32 / 20.0
    }

    pub fn from_toml_str(text: &str) -> Result<Self, TrainError> {
        let config: TrainConfig =
            toml::from_str(text).map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
