use std::path::PathBuf;
use std::process::ExitCode;

use apct_core::exec::Exec;
use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod config;
mod inspect;

use commands::CliError;

/// Adversarial point cloud transformer: data, training, robustness evaluation.
#[derive(Debug, Parser)]
#[command(name = "apct", version)]
struct Cli {
    /// Run every command on one thread.
    #[arg(long, global = true)]
    sequential: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic shape dataset.
    GenDataset(GenDatasetArgs),
    /// Build the corruption suite from a dataset's test split.
    Corrupt(CorruptArgs),
    /// Train a model and write its parameters and epoch log.
    Train(TrainArgs),
    /// Predict a dataset split, one suite cell, or a whole suite.
    Eval(EvalArgs),
    /// Robustness report of model predictions against reference predictions.
    Report(ReportArgs),
    /// Dump per-token significance counts and drop rates for one cloud.
    InspectSignificance(InspectArgs),
    /// Check whole-model gradients against central differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
struct GenDatasetArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Run config whose [dataset] section supplies defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    train_per_class: Option<usize>,
    #[arg(long)]
    test_per_class: Option<usize>,
    /// Points per cloud (at least 8).
    #[arg(long)]
    points: Option<usize>,
    /// Write into a non-empty output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Args)]
struct CorruptArgs {
    /// Dataset root (holds manifest.json).
    #[arg(long)]
    data: PathBuf,
    /// Suite output directory.
    #[arg(long)]
    out: PathBuf,
    /// Run config whose [suite] section supplies the seed.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Build a single cell of this kind (needs --severity).
    #[arg(long, requires = "severity")]
    kind: Option<String>,
    /// Severity 1..=5 of the single cell (needs --kind).
    #[arg(long, requires = "kind")]
    severity: Option<u8>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// TOML run config with [model], [train], [dataset] and [suite] sections.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset root.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for model.apct, train_log.jsonl and config.toml.
    #[arg(long)]
    out: PathBuf,
    /// Disable adversarial key dropping.
    #[arg(long)]
    no_drop: bool,
    /// Disable the auxiliary heads and their loss.
    #[arg(long)]
    no_aux: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Skip the per-epoch test-split accuracy.
    #[arg(long)]
    no_eval: bool,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("source").required(true).args(["data", "suite_cell", "suite"]))]
struct EvalArgs {
    /// Model file.
    #[arg(long)]
    model: PathBuf,
    /// Dataset root.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Dataset split used with --data.
    #[arg(long, default_value = "test", requires = "data")]
    split: String,
    /// One suite cell directory of .pcb files.
    #[arg(long)]
    suite_cell: Option<PathBuf>,
    /// Whole suite; --pred-out is then a directory.
    #[arg(long)]
    suite: Option<PathBuf>,
    /// Prediction CSV (or directory with --suite).
    #[arg(long)]
    pred_out: PathBuf,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long)]
    model_preds_dir: PathBuf,
    #[arg(long)]
    ref_preds_dir: PathBuf,
    /// Suite root the predictions were made on.
    #[arg(long)]
    suite: PathBuf,
    /// Report file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct InspectArgs {
    #[arg(long)]
    model: PathBuf,
    /// Cloud as .pcb, or text with one `x y z` per line.
    #[arg(long)]
    cloud: PathBuf,
    /// JSON dump.
    #[arg(long)]
    out: PathBuf,
    /// Only this stage (0-based).
    #[arg(long)]
    stage: Option<usize>,
    /// Also render a top-view scatter colored by drop rate.
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FaultOp {
    Matmul,
    Softmax,
    Gelu,
    LayerNorm,
    AddRow,
    GroupMax,
    ColMax,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Parameter entries to probe.
    #[arg(long, default_value_t = 256)]
    samples: usize,
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    #[arg(long, hide = true, requires = "fault_factor")]
    fault_op: Option<FaultOp>,
    #[arg(long, hide = true, requires = "fault_op")]
    fault_factor: Option<f64>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let exec = if cli.sequential { Exec::Sequential } else { Exec::Parallel };
    match cli.command {
        Command::GenDataset(a) => commands::gen_dataset(a, exec),
        Command::Corrupt(a) => commands::corrupt(a, exec),
        Command::Train(a) => commands::train(a, exec),
        Command::Eval(a) => commands::eval(a, exec),
        Command::Report(a) => commands::report(a),
        Command::InspectSignificance(a) => inspect::run(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                e.exit();
            }
            let msg = e.to_string();
            let line: Vec<&str> = msg
                .lines()
                .take_while(|l| !l.starts_with("Usage:"))
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .collect();
            eprintln!("apct: error kind=usage: {}", line.join(" ").trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("apct: error kind={}: {}", e.kind, e.message.replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
