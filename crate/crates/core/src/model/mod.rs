//! The segmentation network: a two-branch encoder over appearance and flow,
//! a fusion layer with three selectable operators, convolution+upsample
//! decoders (main and flow-only), and a domain discriminator.
//!
//! Every component walks its parameters through [`crate::nn::ParamSet`], so
//! gradients and optimizer state reuse the component's own struct type, and
//! checkpoints address tensors by the canonical names defined here
//! (`en_s.app.stage1.conv.w`, `disc.conv2.b`, ...).

mod decoder;
mod discriminator;
mod encoder;
mod fusion;
mod seg;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use decoder::{Decoder, DecoderTrace};
pub use discriminator::{Discriminator, DiscriminatorTrace};
pub use encoder::{init_target_encoder, BranchEncoder, Encoder, EncoderTrace};
pub use fusion::{Fusion, FusionTrace};
pub use seg::{SegForward, SegModel};

/// Operator used to merge appearance and flow features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// Convolution over the channel-concatenated branches.
    Conv,
    /// Element-wise product (requires equal branch widths).
    Product,
    /// Element-wise sum (requires equal branch widths).
    Addition,
}

impl std::fmt::Display for FusionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FusionMode::Conv => write!(f, "conv"),
            FusionMode::Product => write!(f, "product"),
            FusionMode::Addition => write!(f, "addition"),
        }
    }
}

/// Architecture hyperparameters. The defaults are the "tiny" configuration:
/// four stride-2 encoder stages (1/16 resolution at the bottleneck) per
/// branch, conv fusion, and a three-stage stride-2 discriminator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Channel width after each encoder stage; one stride-2 stage per entry.
    pub stage_widths: Vec<usize>,
    /// Channel width after each discriminator stage.
    pub disc_widths: Vec<usize>,
    /// Fusion operator φ.
    pub fusion: FusionMode,
    /// Whether the flow branch exists at all. Disabling it yields the
    /// appearance-only baseline: no fusion, no flow decoder.
    pub flow_branch: bool,
    /// Whether the auxiliary flow decoder exists (flow supervision).
    pub flow_supervision: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            stage_widths: vec![16, 32, 64, 96],
            disc_widths: vec![32, 64, 96],
            fusion: FusionMode::Conv,
            flow_branch: true,
            flow_supervision: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.stage_widths.is_empty() || self.stage_widths.contains(&0) {
            return Err("stage_widths must be non-empty positive".into());
        }
        if self.disc_widths.is_empty() || self.disc_widths.contains(&0) {
            return Err("disc_widths must be non-empty positive".into());
        }
        if self.flow_supervision && !self.flow_branch {
            return Err("flow_supervision requires flow_branch".into());
        }
        Ok(())
    }

    /// Total spatial downsampling factor of the encoder.
    pub fn stride(&self) -> usize {
        1 << self.stage_widths.len()
    }

    /// Channel count at the fusion point / decoder input.
    pub fn feature_channels(&self) -> usize {
        *self.stage_widths.last().expect("non-empty stage_widths")
    }

    /// Stable digest of the architecture, stored in checkpoints so a loaded
    /// parameter set can be matched against the model it came from.
    pub fn fingerprint(&self) -> String {
        let canon = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canon.as_bytes());
        let mut out = String::with_capacity(64);
        for byte in digest {
            use std::fmt::Write;
            write!(out, "{byte:02x}").expect("hex format");
        }
        out
    }
}
