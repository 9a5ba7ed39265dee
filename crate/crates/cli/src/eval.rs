//! `motionseg eval` — score a checkpoint on a dataset split, with no
//! fine-tuning and no mutation of either input.

use std::path::PathBuf;

use serde::Serialize;

use motionseg::datasets::{load_davis_layout, Split};
use motionseg::metrics::{evaluate_dataset, EvalOptions};
use motionseg::model::SegModel;
use motionseg::training::{extract_params, load_checkpoint, Checkpoint};

use crate::error::CliError;
use crate::runs;

#[derive(clap::Args, Debug)]
pub struct EvalArgs {
    /// Checkpoint produced by train or adapt.
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Dataset root to score.
    #[arg(long)]
    pub data: PathBuf,
    /// Which split of the dataset to score.
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    /// Output directory for the report files.
    #[arg(long)]
    pub out: PathBuf,
    /// Binarization threshold for predicted probabilities.
    #[arg(long)]
    pub threshold: Option<f32>,
    /// Boundary match tolerance in pixels; defaults to 0.75% of the image
    /// diagonal, rounded up.
    #[arg(long)]
    pub tol_radius: Option<f64>,
    /// Frames count as recalled when scoring strictly above this value.
    #[arg(long)]
    pub recall_threshold: Option<f64>,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
pub enum SplitArg {
    Train,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        }
    }
}

/// Rebuilds the trained network from a checkpoint. Adaptation checkpoints
/// store the model ready for target inference under the empty prefix, so
/// one extraction path covers all three regimes.
pub fn model_from_checkpoint(ckpt: &Checkpoint) -> Result<SegModel<f32>, CliError> {
    let mut model = SegModel::<f32>::new(&ckpt.config.model, 0);
    extract_params(&ckpt.tensors, "", &mut model).map_err(CliError::from)?;
    Ok(model)
}

#[derive(Serialize)]
struct EvalProvenance {
    version: &'static str,
    command: &'static str,
    checkpoint: String,
    fingerprint: String,
    data: String,
    split: String,
    threshold: f32,
    tol_radius: Option<f64>,
    recall_threshold: f64,
    flow_scale: f32,
}

pub fn run(args: &EvalArgs) -> Result<(), CliError> {
    let ckpt = load_checkpoint(&args.ckpt)?;
    let model = model_from_checkpoint(&ckpt)?;

    let defaults = EvalOptions::default();
    let opts = EvalOptions {
        threshold: args.threshold.unwrap_or(defaults.threshold),
        tol_radius: args.tol_radius.or(defaults.tol_radius),
        recall_threshold: args.recall_threshold.unwrap_or(defaults.recall_threshold),
        // Flow entered training divided by crop/20; inference must match or
        // the flow branch sees a different distribution than it learned.
        flow_scale: ckpt.config.flow_scale(),
    };

    let split: Split = args.split.into();
    let handle = load_davis_layout(&args.data, split)?;
    let report = evaluate_dataset(&model, &handle, &opts)?;

    runs::create_dir(&args.out)?;
    runs::write_json(
        &args.out.join("run.json"),
        &EvalProvenance {
            version: runs::VERSION,
            command: "eval",
            checkpoint: args.ckpt.display().to_string(),
            fingerprint: report.fingerprint.clone(),
            data: args.data.display().to_string(),
            split: split.file_stem().to_string(),
            threshold: opts.threshold,
            tol_radius: opts.tol_radius,
            recall_threshold: opts.recall_threshold,
            flow_scale: opts.flow_scale,
        },
    )?;
    runs::write_json(&args.out.join("report.json"), &report)?;
    runs::write_text(&args.out.join("per_sequence.csv"), &report.per_sequence_csv())?;
    runs::write_text(&args.out.join("report.txt"), &report.table())?;

    print!("{}", report.table());
    Ok(())
}
