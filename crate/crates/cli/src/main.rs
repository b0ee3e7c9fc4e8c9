//! `noisenet`: train, evaluate, perturb and repair small MNIST classifiers.

mod commands;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Directory holding the four MNIST IDX files.
pub const DATA_ENV: &str = "NOISENET_DATA";

#[derive(Parser)]
#[command(
    name = "noisenet",
    version,
    about = "Internal-noise experiments on a small MNIST classifier"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a classifier from scratch and write its weights and history.
    Train(TrainArgs),
    /// Print the noise-free accuracy of a weight file.
    Eval(EvalArgs),
    /// Measure accuracy across a grid of noise amplitudes.
    Sweep(SweepArgs),
    /// Apply pooling or a ghost neuron to a weight file.
    Mitigate(MitigateArgs),
    /// Merge sweep CSVs and emit a gnuplot script.
    Report(ReportArgs),
}

#[derive(Args, Clone)]
pub struct DataArgs {
    /// MNIST directory (IDX files with their standard names).
    #[arg(long, env = DATA_ENV, default_value = "data/mnist")]
    pub data_dir: PathBuf,
    /// Use only the first N samples of the split.
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    pub val_fraction: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "20")]
    pub hidden: Vec<usize>,
    /// Weight initialization seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Shuffle seed; defaults to --seed.
    #[arg(long)]
    pub shuffle_seed: Option<u64>,
    #[arg(long, default_value = "weights.json")]
    pub out: PathBuf,
    #[arg(long, default_value = "history.csv")]
    pub history: PathBuf,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub weights: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value = "test")]
    pub split: noisenet::Split,
}

#[derive(Args)]
pub struct MitigationArgs {
    /// Pool every hidden neuron with m replicas.
    #[arg(long, conflicts_with = "ghost")]
    pub pool: Option<usize>,
    /// Add a ghost neuron of variant I, II or III.
    #[arg(long)]
    pub ghost: Option<String>,
    /// Bias magnitude for ghost variant III.
    #[arg(long = "B", requires = "ghost")]
    pub ghost_bias: Option<f64>,
}

#[derive(Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub weights: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value = "test")]
    pub split: noisenet::Split,
    /// additive|multiplicative-correlated|uncorrelated
    #[arg(long)]
    pub noise: noisenet::NoiseKind,
    /// hidden, output, or a 1-based layer index.
    #[arg(long, default_value = "hidden")]
    pub layer: String,
    /// start:end:step or a comma-separated list of √(2D) values.
    #[arg(long, default_value = "0:1:0.05")]
    pub grid: String,
    #[arg(long, default_value_t = noisenet::sweep::DEFAULT_REPEATS)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub mitigation: MitigationArgs,
    /// Output CSV; stdout if omitted. A provenance file `<out>.meta.json` is
    /// written next to it.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct MitigateArgs {
    #[arg(long)]
    pub weights: PathBuf,
    #[command(flatten)]
    pub mitigation: MitigationArgs,
    /// Hidden layer to transform (1-based).
    #[arg(long, default_value_t = 1)]
    pub layer: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct ReportArgs {
    /// LABEL=PATH of a sweep CSV; repeat for each curve.
    #[arg(long = "series", required = true)]
    pub series: Vec<String>,
    /// Noise-free accuracy drawn as a horizontal reference line.
    #[arg(long)]
    pub baseline: Option<f64>,
    #[arg(long, default_value = "report.csv")]
    pub out: PathBuf,
    #[arg(long, default_value = "report.gp")]
    pub script: PathBuf,
    #[arg(long, default_value = "Accuracy vs noise amplitude")]
    pub title: String,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => commands::train(args),
        Command::Eval(args) => commands::eval(args),
        Command::Sweep(args) => commands::sweep(args),
        Command::Mitigate(args) => commands::mitigate(args),
        Command::Report(args) => report::run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
