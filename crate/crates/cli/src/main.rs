mod commands;
mod config;
mod data;
mod document;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use config::{Mode, Preset};
use data::TimeColumn;

/// Dynamical Wasserstein barycenter models for multivariate time series.
#[derive(Debug, Parser)]
#[command(name = "dwb", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Window a CSV series, initialize, and fit the model.
    Fit(FitArgs),
    /// Generate a synthetic series with its ground truth.
    Synth(SynthArgs),
    /// Score fitted models on data, optionally against ground truth.
    Eval(EvalArgs),
    /// Compare Bures-Wasserstein and Euclidean-Cholesky line searches.
    Benchmark(BenchmarkArgs),
}

/// Options shared by every command.
#[derive(Debug, Args)]
pub struct Common {
    /// JSON config; omitted fields take the preset's values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "default")]
    pub preset: Preset,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Run single-threaded.
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Input CSV with a header row.
    pub input: PathBuf,
    /// Result document.
    #[arg(short, long)]
    pub out: PathBuf,
    /// Per-window table (default: result path with `.windows.csv`).
    #[arg(long)]
    pub table: Option<PathBuf>,
    #[arg(long = "K")]
    pub k: Option<usize>,
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub window_n: Option<usize>,
    #[arg(long)]
    pub window_delta: Option<usize>,
    #[arg(long)]
    pub max_outer: Option<usize>,
    /// Single-column CSV of integer state labels, one per sample.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "auto")]
    pub time_column: TimeColumn,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Samples CSV.
    #[arg(short, long)]
    pub out: PathBuf,
    /// Ground-truth document (default: samples path with `.truth.json`).
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long = "K")]
    pub k: Option<usize>,
    #[arg(long)]
    pub d: Option<usize>,
    /// Steps held at each vertex, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub holds: Option<Vec<usize>>,
    /// Ramp lengths between consecutive vertices, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub ramps: Option<Vec<usize>>,
    #[arg(long)]
    pub samples_per_step: Option<usize>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Result documents from `fit`; repeat for a paired table.
    #[arg(long = "fit", required = true)]
    pub fits: Vec<PathBuf>,
    /// Data CSV the metrics are computed on.
    #[arg(long)]
    pub data: PathBuf,
    /// Ground-truth document from `synth`.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Metrics document.
    #[arg(short, long)]
    pub out: PathBuf,
    /// One row per fit (default: metrics path with `.csv`).
    #[arg(long)]
    pub table: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "auto")]
    pub time_column: TimeColumn,
    /// Run single-threaded.
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    /// Output table.
    #[arg(short, long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',')]
    pub dims: Option<Vec<usize>>,
    #[arg(long = "K", value_delimiter = ',')]
    pub ks: Option<Vec<usize>>,
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Run more cells than the configured cap.
    #[arg(long)]
    pub force: bool,
    #[command(flatten)]
    pub common: Common,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit(a) => commands::fit(&a),
        Command::Synth(a) => commands::synth(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Benchmark(a) => commands::benchmark(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            commands::exit_code(&e)
        }
    }
}
