mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Exit status contract.
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_MODEL: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "cellxai", version, about = "Blood-cell image classification with LIME explanations")]
struct Cli {
    /// TOML run configuration; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed for every randomized step.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Scan a labelled directory tree of BMP files into manifest.jsonl.
    Ingest(IngestArgs),
    /// Compute balanced class weights from a manifest.
    Weights(WeightsArgs),
    /// Assign manifest records to stratified folds.
    Split(SplitArgs),
    /// Train the reference network on all folds but one.
    TrainRef(TrainArgs),
    /// Score a model on one fold or on the holdout set.
    Evaluate(EvaluateArgs),
    /// Explain one image's prediction with LIME.
    Explain(ExplainArgs),
}

#[derive(Debug, Args)]
struct IngestArgs {
    #[arg(long)]
    root: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct WeightsArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SplitArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    k: Option<usize>,
    /// Fraction of each class held out of all folds.
    #[arg(long)]
    holdout_fraction: Option<f64>,
    /// Verify per-fold class balance and fail if it is violated.
    #[arg(long)]
    check: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    folds: PathBuf,
    /// Image root the manifest paths are relative to.
    #[arg(long)]
    root: Option<PathBuf>,
    /// Validation fold (0-based).
    #[arg(long)]
    fold: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    hidden_units: Option<usize>,
    #[arg(long)]
    input_side: Option<usize>,
    #[arg(long)]
    augment_copies: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    folds: PathBuf,
    #[arg(long)]
    root: Option<PathBuf>,
    /// Reference parameters (.json) or an ONNX graph with a .onnx.json sidecar.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    fold: Option<usize>,
    /// Score the held-out records instead of a fold.
    #[arg(long, conflicts_with = "fold")]
    holdout: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExplainArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    n_samples: Option<usize>,
    #[arg(long)]
    n_segments: Option<usize>,
    #[arg(long)]
    compactness: Option<f64>,
    #[arg(long)]
    kernel_width: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    top_k: Option<usize>,
    /// Gray out everything but the positive segments in heatmap_positive.png.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    positive_only: Option<bool>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
