//! `motionseg ablate` — the architecture grid: an appearance-only baseline,
//! then each fusion operator with and without flow supervision. All seven
//! rows train on the same dataset with the same seed, so row differences
//! isolate architecture effects.

use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use serde::Serialize;

use motionseg::datasets::Split;
use motionseg::model::FusionMode;
use motionseg::training::{Regime, TrainConfig};

use crate::data;
use crate::error::CliError;
use crate::runs;
use crate::train::{self, Overrides};

#[derive(clap::Args, Debug)]
pub struct AblateArgs {
    /// Base training config applied to every row.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Labeled dataset root shared by all rows (train split).
    #[arg(long)]
    pub source: Option<PathBuf>,
    /// Dataset root whose test split ranks the rows.
    #[arg(long)]
    pub val: PathBuf,
    /// Output directory; each row trains under `rows/<name>`.
    #[arg(long)]
    pub out: PathBuf,
    /// Run the rows as parallel child processes instead of sequentially.
    #[arg(long)]
    pub parallel: bool,
    #[command(flatten)]
    pub overrides: Overrides,
}

struct RowSpec {
    name: &'static str,
    flow_branch: bool,
    fusion: FusionMode,
    flow_supervision: bool,
}

/// Grid order: the no-flow baseline, the three fusion operators bare, then
/// the same three with the auxiliary flow decoder.
const ROWS: [RowSpec; 7] = [
    RowSpec { name: "baseline", flow_branch: false, fusion: FusionMode::Conv, flow_supervision: false },
    RowSpec { name: "product", flow_branch: true, fusion: FusionMode::Product, flow_supervision: false },
    RowSpec { name: "addition", flow_branch: true, fusion: FusionMode::Addition, flow_supervision: false },
    RowSpec { name: "conv", flow_branch: true, fusion: FusionMode::Conv, flow_supervision: false },
    RowSpec { name: "product+fs", flow_branch: true, fusion: FusionMode::Product, flow_supervision: true },
    RowSpec { name: "addition+fs", flow_branch: true, fusion: FusionMode::Addition, flow_supervision: true },
    RowSpec { name: "conv+fs", flow_branch: true, fusion: FusionMode::Conv, flow_supervision: true },
];

/// Per-row completion: `Err` carries the exit code the row's failure maps
/// to plus a human-readable reason.
type RowOutcome = Result<(), (i32, String)>;

#[derive(Serialize)]
struct RowResult {
    name: &'static str,
    flow_branch: bool,
    fusion: String,
    flow_supervision: bool,
    /// Mean validation J over the last three epochs; None when the row failed.
    j_val: Option<f64>,
    error: Option<String>,
}

#[derive(Serialize)]
struct AblateReport {
    version: &'static str,
    command: &'static str,
    /// Rows in grid order, regardless of outcome.
    rows: Vec<RowResult>,
    /// Completed row names sorted by descending validation J.
    ranking: Vec<&'static str>,
    best: Option<&'static str>,
}

fn row_config(base: &TrainConfig, row: &RowSpec) -> TrainConfig {
    let mut cfg = base.clone();
    cfg.model.flow_branch = row.flow_branch;
    cfg.model.fusion = row.fusion;
    cfg.model.flow_supervision = row.flow_supervision;
    cfg
}

fn fusion_label(row: &RowSpec) -> String {
    if row.flow_branch {
        row.fusion.to_string()
    } else {
        "—".to_string()
    }
}

/// Pulls the ranking score back out of a completed row's report file; both
/// execution modes produce the same artifact, so scoring has one path.
fn row_score(row_dir: &Path) -> Result<f64, String> {
    let body = std::fs::read_to_string(row_dir.join("report.json"))
        .map_err(|e| format!("unreadable report.json: {e}"))?;
    let report: serde_json::Value =
        serde_json::from_str(&body).map_err(|e| format!("bad report.json: {e}"))?;
    report["validation_j"]["last3_mean"]
        .as_f64()
        .ok_or_else(|| "report.json lacks a validation score".to_string())
}

pub fn run(args: &AblateArgs) -> Result<(), CliError> {
    let mut base = train::load_config(args.config.as_deref(), TrainConfig::default())?;
    args.overrides.apply(&mut base);
    if let Some(s) = &args.source {
        base.source_root = Some(s.clone());
    }
    if base.regime != Regime::Supervised {
        return Err(CliError::usage(format!(
            "ablation rows train supervised, but the config says {}",
            base.regime
        )));
    }
    let source_root = base.source_root.clone().ok_or_else(|| {
        CliError::usage("a labeled dataset is required: pass --source <root> or set source_root")
    })?;

    runs::create_dir(&args.out)?;
    train::write_provenance(&args.out, &base, "ablate")?;

    // Row validity is checked up front so a typo fails the whole command
    // instead of burning six rows before the seventh errors.
    for row in &ROWS {
        row_config(&base, row).validate()?;
    }

    let rows_dir = args.out.join("rows");
    let outcomes = if args.parallel {
        run_parallel(&base, &source_root, &args.val, &rows_dir)?
    } else {
        run_sequential(&base, &source_root, &args.val, &rows_dir)?
    };

    let mut rows = Vec::new();
    let mut worst_failure: Option<i32> = None;
    for (row, outcome) in ROWS.iter().zip(outcomes) {
        let (j_val, error) = match outcome {
            Ok(()) => match row_score(&rows_dir.join(row.name)) {
                Ok(j) => (Some(j), None),
                Err(msg) => {
                    worst_failure = Some(worst_failure.unwrap_or(0).max(2));
                    (None, Some(msg))
                }
            },
            Err((code, msg)) => {
                worst_failure = Some(worst_failure.unwrap_or(0).max(code));
                (None, Some(msg))
            }
        };
        rows.push(RowResult {
            name: row.name,
            flow_branch: row.flow_branch,
            fusion: fusion_label(row),
            flow_supervision: row.flow_supervision,
            j_val,
            error,
        });
    }

    let mut ranking: Vec<(&'static str, f64)> =
        rows.iter().filter_map(|r| r.j_val.map(|j| (r.name, j))).collect();
    ranking.sort_by(|a, b| b.1.total_cmp(&a.1));
    let report = AblateReport {
        version: runs::VERSION,
        command: "ablate",
        ranking: ranking.iter().map(|(n, _)| *n).collect(),
        best: ranking.first().map(|(n, _)| *n),
        rows,
    };

    let table = render_table(&report);
    runs::write_json(&args.out.join("report.json"), &report)?;
    runs::write_text(&args.out.join("table.txt"), &table)?;
    print!("{table}");

    if let Some(code) = worst_failure {
        // The grid completed and the table marks the casualties, but the
        // process must not report success; the most severe row code wins.
        let failed = report.rows.iter().filter(|r| r.error.is_some()).count();
        return Err(CliError::Propagated {
            code,
            msg: format!("{failed} of {} ablation rows failed; see the table", ROWS.len()),
        });
    }
    Ok(())
}

fn run_sequential(
    base: &TrainConfig,
    source_root: &Path,
    val_root: &Path,
    rows_dir: &Path,
) -> Result<Vec<RowOutcome>, CliError> {
    // One shared load; every row sees the identical frame set.
    let source = data::labeled_split(source_root, Split::Train)?;
    let val = data::labeled_split(val_root, Split::Test)?;

    let mut outcomes = Vec::new();
    for row in &ROWS {
        let cfg = row_config(base, row);
        let row_dir = rows_dir.join(row.name);
        match train::run_supervised(&cfg, &source, Some(&val), &row_dir) {
            Ok(report) => {
                let j = report.validation_j.map(|v| v.last3_mean).unwrap_or(f64::NAN);
                println!("row {:<12} J = {j:.4}", row.name);
                outcomes.push(Ok(()));
            }
            Err(e) => {
                // A diverged or broken row must not take the grid down.
                println!("row {:<12} failed: {e}", row.name);
                outcomes.push(Err((e.exit_code(), e.to_string())));
            }
        }
    }
    Ok(outcomes)
}

fn run_parallel(
    base: &TrainConfig,
    source_root: &Path,
    val_root: &Path,
    rows_dir: &Path,
) -> Result<Vec<RowOutcome>, CliError> {
    let exe = std::env::current_exe()
        .map_err(|e| CliError::io(PathBuf::from("current_exe"), e))?;

    let mut children = Vec::new();
    for row in &ROWS {
        let mut cfg = row_config(base, row);
        cfg.source_root = Some(source_root.to_path_buf());
        let row_dir = rows_dir.join(row.name);
        runs::create_dir(&row_dir)?;
        let cfg_path = row_dir.join("config.toml");
        runs::write_text(&cfg_path, &cfg.to_toml_string())?;
        let child = Command::new(&exe)
            .arg("train")
            .arg("--config")
            .arg(&cfg_path)
            .arg("--val")
            .arg(val_root)
            .arg("--out")
            .arg(&row_dir)
            .stdout(Stdio::null())
            .spawn()
            .map_err(|e| CliError::io(&exe, e));
        children.push((row.name, child));
    }

    let mut outcomes = Vec::new();
    for (name, child) in children {
        let outcome = match child {
            Ok(mut c) => match c.wait() {
                Ok(status) if status.success() => {
                    println!("row {name:<12} finished");
                    Ok(())
                }
                Ok(status) => {
                    println!("row {name:<12} failed: exit {status}");
                    Err((status.code().unwrap_or(2), format!("training process exited with {status}")))
                }
                Err(e) => Err((2, format!("could not reap training process: {e}"))),
            },
            Err(e) => Err((e.exit_code(), e.to_string())),
        };
        outcomes.push(outcome);
    }
    Ok(outcomes)
}

fn render_table(report: &AblateReport) -> String {
    let mut out = String::from("row           flow_branch  fusion    flow_sup  J(val)\n");
    for r in &report.rows {
        let score = match r.j_val {
            Some(j) => format!("{j:.4}"),
            None => format!("failed: {}", r.error.as_deref().unwrap_or("unknown")),
        };
        out.push_str(&format!(
            "{:<13} {:<12} {:<9} {:<9} {score}\n",
            r.name,
            if r.flow_branch { "yes" } else { "no" },
            r.fusion,
            if r.flow_supervision { "yes" } else { "no" },
        ));
    }
    if let Some(best) = report.best {
        let j = report
            .rows
            .iter()
            .find(|r| r.name == best)
            .and_then(|r| r.j_val)
            .unwrap_or(f64::NAN);
        out.push_str(&format!("best: {best} (J = {j:.4})\n"));
    }
    out
}
