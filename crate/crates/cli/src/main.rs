//! `stiction`: file-based pipeline stages from simulation to metric reports.
//!
//! Each stage writes its outputs atomically together with a
//! `.manifest.toml` that records arguments, configuration and checksums.

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use error::{CliError, ExitKind};

#[derive(Debug, Parser)]
#[command(name = "stiction", version, about = "Control-valve stiction detection and early prediction from OP/PV data")]
#[command(
    after_help = "Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.\nSet STICTION_LOG=info|debug for progress output."
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a PI loop with scheduled valve stiction; writes series.csv, ground_truth.csv,
    /// raw op.csv/pv.csv exports and manifest.toml into DIR.
    Simulate {
        /// TOML file with [loop], [stiction] and [alternating] or [[episode]] sections.
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Merge raw OP and PV exports (timestamp,value) into the canonical one-minute table.
    Ingest {
        #[arg(long)]
        op: PathBuf,
        #[arg(long)]
        pv: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Label fixed-length windows of a canonical table.
    Label(LabelArgs),
    /// Build a normalized, chronologically split window dataset.
    Dataset(DatasetArgs),
    /// Train a CNN, LSTM or CNN-SVM classifier on a dataset.
    Train(TrainArgs),
    /// Classify a detect-mode dataset; writes a trace and a metric report.
    Detect(ClassifyArgs),
    /// Classify a predict-mode dataset; writes a trace and a metric report.
    Predict(ClassifyArgs),
    /// Train and score one model per detect/lookahead pair (D, K in 1..=4).
    Heatmap(HeatmapArgs),
    /// Metric report from any trace file.
    Evaluate {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-run the stage recorded in a manifest.
    Rerun {
        #[arg(long)]
        manifest: PathBuf,
        /// Fail unless every output matches the recorded checksum.
        #[arg(long)]
        check: bool,
    },
}

#[derive(Debug, Args)]
struct LabelArgs {
    /// slope_ratio, t2 (hotelling_t2) or ground_truth.
    #[arg(long)]
    method: String,
    /// Canonical table.
    #[arg(long = "in", value_name = "FILE")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Slope-ratio history length in windows [default: 24].
    #[arg(long)]
    n: Option<usize>,
    /// Hotelling T² threshold percentile [default: 90].
    #[arg(long)]
    percentile: Option<f64>,
    /// PV slopes below this magnitude give a zero ratio [default: 1e-9].
    #[arg(long)]
    epsilon: Option<f64>,
    /// Window length in minutes [default: 60].
    #[arg(long)]
    window: Option<usize>,
    /// Per-minute truth from `simulate`, for --method ground_truth.
    #[arg(long)]
    ground_truth: Option<PathBuf>,
    /// TOML file; its [labeling] section supplies defaults.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DatasetArgs {
    #[arg(long, value_parser = ["detect", "predict"])]
    mode: String,
    /// Canonical table.
    #[arg(long)]
    series: PathBuf,
    /// Label table from `label`.
    #[arg(long)]
    labels: PathBuf,
    /// Detect windows D in 1..=4 (predict mode) [default: 1].
    #[arg(long)]
    detect: Option<usize>,
    /// Lookahead windows K in 1..=4 (predict mode) [default: 1].
    #[arg(long)]
    lookahead: Option<usize>,
    /// Samples kept per window after decimation [default: 24].
    #[arg(long)]
    model_len: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    /// TOML file; its [windowing] section supplies defaults.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// cnn, lstm or cnn_svm.
    #[arg(long)]
    arch: String,
    #[arg(long)]
    dataset: PathBuf,
    /// Model file; history goes to <out>.history.csv.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Maximum epochs [default: 100].
    #[arg(long)]
    epochs: Option<usize>,
    /// Divide every layer width by this factor.
    #[arg(long)]
    reduce: Option<usize>,
    /// TOML file with [train], [architecture] and [svm] sections.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Val,
    Test,
    All,
}

impl Split {
    fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::All => "all",
        }
    }
}

#[derive(Debug, Args)]
struct ClassifyArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// Trace file `window_index,start_timestamp,actual,predicted,probability`.
    #[arg(long)]
    out: PathBuf,
    /// Metric report path [default: <out>.metrics.txt].
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    split: Split,
}

#[derive(Debug, Args)]
struct HeatmapArgs {
    /// cnn, lstm or cnn_svm.
    #[arg(long)]
    arch: String,
    /// Canonical table.
    #[arg(long = "in", value_name = "FILE")]
    input: PathBuf,
    /// Label table from `label`.
    #[arg(long)]
    labels: PathBuf,
    /// Grid file; per-cell seeds and epochs go to <out>.cells.csv.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    reduce: Option<usize>,
    #[arg(long)]
    model_len: Option<usize>,
    /// TOML file with [train], [architecture], [svm] and [windowing] sections.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("STICTION_LOG", "warn")).format_timestamp(None).init();
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand)
            {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let first = e.to_string().lines().next().unwrap_or("").trim_start_matches("error: ").to_string();
            eprintln!("{}", CliError::usage("Usage", format!("{first} (see --help)")));
            return ExitCode::from(ExitKind::Usage as u8);
        }
    };
    match commands::dispatch(cli, argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.kind as u8)
        }
    }
}
