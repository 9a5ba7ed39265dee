//! Single-binary operator surface for the motionseg laboratory: dataset
//! generation, training, adaptation, evaluation, flow utilities, and the
//! ablation harness.
//!
//! Exit codes are a stable scripting contract: 0 success, 1 usage error,
//! 2 data error, 3 numeric failure.

mod ablate;
mod data;
mod error;
mod eval;
mod flow;
mod generate;
mod runs;
mod train;

use clap::Parser;

use error::CliError;

#[derive(Parser, Debug)]
#[command(
    name = "motionseg",
    version,
    about = "Two-stream video object segmentation with adversarial domain adaptation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Subcommand, Debug)]
enum Command {
    /// Materialize a synthetic dataset into a DAVIS-style directory tree.
    Generate(generate::GenerateArgs),
    /// Train the segmentation network on a labeled dataset.
    Train(train::TrainArgs),
    /// Adapt a model to an unlabeled target domain.
    Adapt(train::AdaptArgs),
    /// Score a checkpoint on a dataset split.
    Eval(eval::EvalArgs),
    /// Inspect and transform Middlebury .flo files.
    Flow(flow::FlowArgs),
    /// Train the architecture ablation grid and consolidate one table.
    Ablate(ablate::AblateArgs),
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help and --version are successful outputs, not usage errors.
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };

    let result: Result<(), CliError> = match &cli.command {
        Command::Generate(args) => generate::run(args),
        Command::Train(args) => train::run_train(args),
        Command::Adapt(args) => train::run_adapt(args),
        Command::Eval(args) => eval::run(args),
        Command::Flow(args) => flow::run(args),
        Command::Ablate(args) => ablate::run(args),
    };

    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
