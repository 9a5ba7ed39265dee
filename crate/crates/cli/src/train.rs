//! `motionseg train` and `motionseg adapt` — the supervised regime and the
//! two adaptation regimes, sharing one config-file + override-flags surface.

use std::path::{Path, PathBuf};

use serde::Serialize;

use motionseg::datasets::{FrameSample, Split};
use motionseg::model::FusionMode;
use motionseg::training::{
    Regime, SeparatedUdaTrainer, SharedUdaTrainer, SupervisedTrainer, TrainConfig, TrainError,
    TrainHistory,
};

use crate::data;
use crate::error::CliError;
use crate::runs;

#[derive(clap::Args, Debug)]
pub struct TrainArgs {
    /// Run config TOML; defaults apply for everything unset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Labeled dataset root (its train split feeds the run). Overrides the
    /// config file's source_root.
    #[arg(long)]
    pub source: Option<PathBuf>,
    /// Dataset root whose test split is scored after every epoch.
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// Run directory for checkpoint, history, and report.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(clap::Args, Debug)]
pub struct AdaptArgs {
    /// Run config TOML; adaptation defaults apply for everything unset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Adaptation regime: one encoder shared across domains, or a separated
    /// target copy trained against a frozen source model.
    #[arg(long, value_enum)]
    pub regime: Option<RegimeArg>,
    /// Supervised source checkpoint: required for the separated regime,
    /// optional warm start for the shared one.
    #[arg(long)]
    pub source_ckpt: Option<PathBuf>,
    /// Labeled source dataset root (train split).
    #[arg(long)]
    pub source: Option<PathBuf>,
    /// Unlabeled target dataset root (train split); annotations are never
    /// read even if present.
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// Dataset root whose labeled test split is scored after every epoch.
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// Run directory for checkpoint, history, and report.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
pub enum RegimeArg {
    Shared,
    Separated,
}

impl From<RegimeArg> for Regime {
    fn from(r: RegimeArg) -> Regime {
        match r {
            RegimeArg::Shared => Regime::UdaShared,
            RegimeArg::Separated => Regime::UdaSeparated,
        }
    }
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
pub enum FusionArg {
    Conv,
    Product,
    Addition,
}

impl From<FusionArg> for FusionMode {
    fn from(f: FusionArg) -> FusionMode {
        match f {
            FusionArg::Conv => FusionMode::Conv,
            FusionArg::Product => FusionMode::Product,
            FusionArg::Addition => FusionMode::Addition,
        }
    }
}

/// Hyperparameter flags accepted by train, adapt, and ablate; every flag
/// overrides the corresponding config-file value.
#[derive(clap::Args, Debug, Clone, Default)]
pub struct Overrides {
    /// Number of training epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Initial learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Per-epoch multiplicative learning-rate decay.
    #[arg(long)]
    pub lr_decay: Option<f64>,
    /// Training batch size.
    #[arg(long)]
    pub batch: Option<usize>,
    /// Square crop side for training batches.
    #[arg(long)]
    pub crop: Option<usize>,
    /// Root RNG seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Fusion operator merging the appearance and flow branches.
    #[arg(long, value_enum)]
    pub fusion: Option<FusionArg>,
    /// Keep (true) or drop (false) the auxiliary flow-reconstruction decoder.
    #[arg(long)]
    pub flow_supervision: Option<bool>,
    /// Keep (true) or drop (false) the flow branch; false is the
    /// appearance-only baseline and implies no flow supervision.
    #[arg(long)]
    pub flow_branch: Option<bool>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut TrainConfig) {
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.lr {
            cfg.learning_rate = v;
        }
        if let Some(v) = self.lr_decay {
            cfg.lr_decay = v;
        }
        if let Some(v) = self.batch {
            cfg.batch_size = v;
        }
        if let Some(v) = self.crop {
            cfg.crop = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.fusion {
            cfg.model.fusion = v.into();
        }
        if let Some(v) = self.flow_supervision {
            cfg.model.flow_supervision = v;
        }
        if let Some(v) = self.flow_branch {
            cfg.model.flow_branch = v;
            // Dropping the branch drops its decoder unless the operator
            // explicitly asked for the (invalid) combination.
            if !v && self.flow_supervision.is_none() {
                cfg.model.flow_supervision = false;
            }
        }
    }
}

/// Reads the config file when given, otherwise starts from `fallback`.
pub fn load_config(path: Option<&Path>, fallback: TrainConfig) -> Result<TrainConfig, CliError> {
    match path {
        Some(p) => Ok(TrainConfig::from_toml_str(&runs::read_to_string(p)?)?),
        None => Ok(fallback),
    }
}

#[derive(Serialize)]
struct Provenance<'a> {
    version: &'static str,
    command: &'a str,
    regime: String,
    seed: u64,
}

/// Drops the resolved config snapshot and the run manifest into the run
/// directory before training starts, so even a failed run keeps its
/// provenance.
pub fn write_provenance(out: &Path, cfg: &TrainConfig, command: &str) -> Result<(), CliError> {
    runs::write_text(&out.join("config.toml"), &cfg.to_toml_string())?;
    runs::write_json(
        &out.join("run.json"),
        &Provenance { version: runs::VERSION, command, regime: cfg.regime.to_string(), seed: cfg.seed },
    )
}

#[derive(Serialize, Clone, Copy)]
pub struct ValidationSummary {
    /// J on the validation split after the final epoch.
    pub last: f64,
    /// Mean over the last three validated epochs; steadier for ranking runs.
    pub last3_mean: f64,
}

#[derive(Serialize, Clone, Copy)]
struct FinalLosses {
    l_s: f64,
    l_msk_main: f64,
    l_msk_flow: f64,
    l_ent: f64,
    l_d: f64,
    disc_acc: f64,
}

#[derive(Serialize)]
pub struct RunReport {
    version: &'static str,
    regime: String,
    pub steps: u64,
    pub epochs: u64,
    final_losses: Option<FinalLosses>,
    pub validation_j: Option<ValidationSummary>,
}

fn summarize(regime: Regime, history: &TrainHistory) -> RunReport {
    let last = history.steps.last();
    let validation_j = if history.validation.is_empty() {
        None
    } else {
        let n = history.validation.len();
        let tail = &history.validation[n.saturating_sub(3)..];
        Some(ValidationSummary {
            last: history.validation[n - 1].j_mean,
            last3_mean: tail.iter().map(|r| r.j_mean).sum::<f64>() / tail.len() as f64,
        })
    };
    RunReport {
        version: runs::VERSION,
        regime: regime.to_string(),
        steps: last.map_or(0, |r| r.step),
        epochs: last.map_or(0, |r| r.epoch + 1),
        final_losses: last.map(|r| FinalLosses {
            l_s: r.l_s,
            l_msk_main: r.l_msk_main,
            l_msk_flow: r.l_msk_flow,
            l_ent: r.l_ent,
            l_d: r.l_d,
            disc_acc: r.disc_acc,
        }),
        validation_j,
    }
}

/// Writes the step/validation logs, then propagates any training error:
/// a diverged run keeps its history for post-mortem, but only a completed
/// run gets a report.json.
fn finalize(
    out: &Path,
    regime: Regime,
    result: Result<(), TrainError>,
    history: &TrainHistory,
) -> Result<RunReport, CliError> {
    runs::write_text(&out.join("history.csv"), &history.csv())?;
    if !history.validation.is_empty() {
        runs::write_text(&out.join("validation.csv"), &history.validation_csv())?;
    }
    result?;
    let report = summarize(regime, history);
    runs::write_json(&out.join("report.json"), &report)?;
    Ok(report)
}

fn announce(out: &Path, report: &RunReport) {
    println!(
        "run complete: {} steps over {} epochs; checkpoint at {}",
        report.steps,
        report.epochs,
        out.join(motionseg::training::CHECKPOINT_FILE).display()
    );
    if let Some(v) = &report.validation_j {
        println!("validation J = {:.4} (last-3 mean {:.4})", v.last, v.last3_mean);
    }
}

/// One supervised run into a prepared output directory; shared between
/// `train` and the ablation rows.
pub fn run_supervised(
    cfg: &TrainConfig,
    source: &[FrameSample],
    val: Option<&[FrameSample]>,
    out: &Path,
) -> Result<RunReport, CliError> {
    runs::create_dir(out)?;
    write_provenance(out, cfg, "train")?;
    let mut trainer = SupervisedTrainer::new(cfg)?;
    let result = trainer.run(source, val, Some(out));
    finalize(out, cfg.regime, result, &trainer.history)
}

pub fn run_train(args: &TrainArgs) -> Result<(), CliError> {
    let mut cfg = load_config(args.config.as_deref(), TrainConfig::default())?;
    args.overrides.apply(&mut cfg);
    if let Some(s) = &args.source {
        cfg.source_root = Some(s.clone());
    }
    if cfg.regime != Regime::Supervised {
        return Err(CliError::usage(format!(
            "train runs the supervised regime, but the config says {}; use `motionseg adapt`",
            cfg.regime
        )));
    }
    cfg.validate()?;
    let source_root = cfg.source_root.clone().ok_or_else(|| {
        CliError::usage("a labeled dataset is required: pass --source <root> or set source_root")
    })?;

    let source = data::labeled_split(&source_root, Split::Train)?;
    let val = match &args.val {
        Some(root) => Some(data::labeled_split(root, Split::Test)?),
        None => None,
    };

    let report = run_supervised(&cfg, &source, val.as_deref(), &args.out)?;
    announce(&args.out, &report);
    Ok(())
}

pub fn run_adapt(args: &AdaptArgs) -> Result<(), CliError> {
    let flag_regime = args.regime.map(Regime::from);
    let mut cfg = match &args.config {
        Some(p) => load_config(Some(p), TrainConfig::default())?,
        None => {
            let regime = flag_regime.ok_or_else(|| {
                CliError::usage(
                    "adapt needs an adaptation regime: pass --regime shared|separated or set it in a config file",
                )
            })?;
            TrainConfig::uda_defaults(regime)
        }
    };
    if let Some(r) = flag_regime {
        cfg.regime = r;
    }
    if cfg.regime == Regime::Supervised {
        return Err(CliError::usage(
            "adapt needs an adaptation regime: pass --regime shared|separated or set it in the config",
        ));
    }
    args.overrides.apply(&mut cfg);
    if let Some(s) = &args.source {
        cfg.source_root = Some(s.clone());
    }
    if let Some(t) = &args.target {
        cfg.target_root = Some(t.clone());
    }
    if let Some(c) = &args.source_ckpt {
        cfg.warm_start = Some(c.clone());
    }
    cfg.validate()?;
    if cfg.regime == Regime::UdaSeparated && cfg.warm_start.is_none() {
        return Err(CliError::usage(
            "adapt --regime separated requires --source-ckpt <checkpoint>: the separated regime \
             adapts a copy of an already-trained source model",
        ));
    }
    let source_root = cfg.source_root.clone().ok_or_else(|| {
        CliError::usage("a labeled source dataset is required: pass --source <root> or set source_root")
    })?;
    let target_root = cfg.target_root.clone().ok_or_else(|| {
        CliError::usage("an unlabeled target dataset is required: pass --target <root> or set target_root")
    })?;

    let source = data::labeled_split(&source_root, Split::Train)?;
    let target = data::unlabeled_split(&target_root, Split::Train)?;
    let val = match &args.val {
        Some(root) => Some(data::labeled_split(root, Split::Test)?),
        None => None,
    };

    runs::create_dir(&args.out)?;
    write_provenance(&args.out, &cfg, "adapt")?;

    let report = match cfg.regime {
        Regime::UdaShared => {
            let mut trainer = match &cfg.warm_start {
                Some(path) => SharedUdaTrainer::warm_start(&cfg, path)?,
                None => SharedUdaTrainer::new(&cfg)?,
            };
            let result = trainer.run(&source, &target, val.as_deref(), Some(&args.out));
            finalize(&args.out, cfg.regime, result, &trainer.history)?
        }
        Regime::UdaSeparated => {
            let path = cfg.warm_start.clone().expect("checked above");
            let mut trainer = SeparatedUdaTrainer::from_checkpoint(&cfg, &path)?;
            let result = trainer.run(&source, &target, val.as_deref(), Some(&args.out));
            finalize(&args.out, cfg.regime, result, &trainer.history)?
        }
        Regime::Supervised => unreachable!("rejected above"),
    };
    announce(&args.out, &report);
    Ok(())
}
