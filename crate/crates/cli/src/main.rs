//! `gridcast`: generate synthetic grid data, train the forecasters, evaluate
//! them side by side, and predict the next system state.

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Process exit codes.
pub mod exit {
    pub const OK: u8 = 0;
    pub const USAGE: u8 = 1;
    pub const GENERATION: u8 = 2;
    pub const TRAINING: u8 = 3;
    pub const EVALUATION: u8 = 4;
}

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        CliError {
            code,
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(exit::USAGE, message)
    }
}

#[derive(Debug, Parser)]
#[command(name = "gridcast", version, about = "Topology-aware forecasting of power-system states")]
pub struct Cli {
    /// TOML run configuration; command-line flags override its values
    #[arg(short, long, global = true, value_name = "FILE", display_order = 100)]
    pub config: Option<PathBuf>,
    /// Run directory holding every artifact [default: run]
    #[arg(long, global = true, value_name = "DIR", display_order = 101)]
    pub out: Option<PathBuf>,
    /// Master seed (integer); falls back to the config file, then GRIDCAST_SEED, then 0
    #[arg(long, global = true, value_name = "N", display_order = 102)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize profiles, solve hourly AC power flows, write the dataset
    Generate(GenerateArgs),
    /// Train one or all forecasters on the run dataset
    Train(TrainArgs),
    /// Score all four models on the validation windows and write the report
    Evaluate(EvaluateArgs),
    /// Predict the state one hour after a window of snapshots
    Predict(PredictArgs),
    /// Re-render report files from a saved report.json
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Grid: `nrel118` or a directory with bus.csv, branch.csv, gen.csv
    #[arg(long, value_name = "SOURCE")]
    pub grid: Option<String>,
    /// Horizon length in hourly snapshots (hours)
    #[arg(long, value_name = "HOURS")]
    pub hours: Option<usize>,
    /// Input window length the dataset must support (hours)
    #[arg(long, value_name = "HOURS")]
    pub seq_len: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Gnn,
    Mlp,
    Linear,
    Rolling,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScheduleArg {
    Constant,
    Cosine,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// Input window length (hours)
    #[arg(long, value_name = "HOURS")]
    pub seq_len: Option<usize>,
    /// Leading fraction of snapshots used for training (0..1)
    #[arg(long, value_name = "FRACTION")]
    pub train_frac: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Model to train
    #[arg(long, value_enum, default_value = "all")]
    pub model: ModelArg,
    /// Training epochs (full passes over the training windows)
    #[arg(long, value_name = "N")]
    pub epochs: Option<usize>,
    /// Initial Adam step size (per optimizer step)
    #[arg(long, value_name = "RATE")]
    pub lr: Option<f64>,
    /// Learning-rate schedule over the run
    #[arg(long, value_enum, value_name = "KIND")]
    pub schedule: Option<ScheduleArg>,
    /// Stop after this many epochs without validation improvement (epochs)
    #[arg(long, value_name = "EPOCHS")]
    pub patience: Option<usize>,
    /// GNN dropout probability after each graph layer (0..1)
    #[arg(long, value_name = "P")]
    pub dropout: Option<f64>,
    #[command(flatten)]
    pub split: SplitArgs,
    /// Continue from the last saved epoch instead of starting over
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Leading fraction of snapshots used for training (0..1)
    #[arg(long, value_name = "FRACTION")]
    pub train_frac: Option<f64>,
    /// Also write rmse_bars.svg
    #[arg(long)]
    pub svg: bool,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Model whose checkpoint to load
    #[arg(long, value_enum, default_value = "gnn")]
    pub model: ModelArg,
    /// Checkpoint file [default: <out>/checkpoints/<model>.ckpt]
    #[arg(long, value_name = "FILE")]
    pub checkpoint: Option<PathBuf>,
    /// Normalization statistics the checkpoint must match [default: <out>/checkpoints/norm_stats.json]
    #[arg(long, value_name = "FILE")]
    pub stats: Option<PathBuf>,
    /// Directory with nodes.csv and edges.csv holding exactly one window
    #[arg(long, value_name = "DIR", conflicts_with = "start")]
    pub window: Option<PathBuf>,
    /// Use the run dataset's snapshots START..START+seq_len (snapshot index)
    #[arg(long, value_name = "START")]
    pub start: Option<usize>,
    /// Output CSV [default: <out>/prediction.csv]
    #[arg(long, value_name = "FILE")]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Saved report [default: <out>/report/report.json]
    #[arg(long, value_name = "FILE")]
    pub input: Option<PathBuf>,
    /// Destination directory [default: <out>/report]
    #[arg(long, value_name = "DIR")]
    pub dest: Option<PathBuf>,
    /// Also write rmse_bars.svg
    #[arg(long)]
    pub svg: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::USAGE } else { exit::OK });
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::from(exit::OK),
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
