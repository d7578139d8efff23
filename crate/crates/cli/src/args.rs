use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "pgp", version, about = "Streaming parametric Gaussian process regression")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model and write it to disk.
    Train(Box<TrainArgs>),
    /// Predict mean and standard deviation for the rows of a CSV file.
    Predict(PredictArgs),
    /// Report the normalized test MSE of a model on a labelled CSV file.
    Eval(EvalArgs),
    /// Write a synthetic dataset as CSV.
    Synth(SynthArgs),
    /// Write plot-ready CSV files describing a trained model.
    ExportPlots(ExportArgs),
}

/// Where training rows come from. Exactly one must be given.
#[derive(Debug, Clone, Args)]
#[group(required = true, multiple = false)]
pub struct SourceArgs {
    /// Headed CSV file.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Generate N rows of y = x sin(4πx) + noise.
    #[arg(long, value_name = "N")]
    pub synth_1d: Option<usize>,
    /// Generate N rows with d-relevant informative columns out of d-total.
    #[arg(long, value_name = "N")]
    pub synth_highdim: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct CsvArgs {
    /// Target column.
    #[arg(long, default_value = "y")]
    pub target: String,
    /// Comma-separated feature columns; default is every other column.
    #[arg(long, value_delimiter = ',')]
    pub features: Vec<String>,
    #[arg(long, default_value_t = ',')]
    pub delimiter: char,
}

#[derive(Debug, Clone, Args)]
pub struct SynthShape {
    /// Noise standard deviation of synthetic targets.
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, default_value_t = 8)]
    pub d_total: usize,
    #[arg(long, default_value_t = 2)]
    pub d_relevant: usize,
}

#[derive(Debug, Clone, Args)]
#[group(required = true, multiple = false)]
pub struct LengthArgs {
    /// Number of mini-batch iterations.
    #[arg(long)]
    pub iters: Option<usize>,
    /// Number of passes over the training split.
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[command(flatten)]
    pub csv: CsvArgs,
    #[command(flatten)]
    pub shape: SynthShape,
    /// Number of inducing points.
    #[arg(long)]
    pub m: usize,
    /// Mini-batch size.
    #[arg(long)]
    pub batch: usize,
    #[command(flatten)]
    pub length: LengthArgs,
    /// Seed for data generation and every random choice made in training.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Observation noise std in normalized target units (held fixed).
    #[arg(long, default_value_t = 0.1)]
    pub sigma_eps: f64,
    /// Starting log ARD weight for every input; default scales to each column's spread.
    #[arg(long, allow_hyphen_values = true)]
    pub init_log_w: Option<f64>,
    /// Adam step size.
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Clip the hyperparameter gradient to this Euclidean norm.
    #[arg(long)]
    pub clip_norm: Option<f64>,
    /// Keep kernel hyperparameters at their initial values.
    #[arg(long)]
    pub freeze_hyper: bool,
    /// Fraction of rows held out for testing (0 disables the split).
    #[arg(long, default_value_t = 0.0)]
    pub test_fraction: f64,
    /// Record metrics (and write a checkpoint) every this many iterations.
    #[arg(long, default_value_t = 100)]
    pub eval_every: usize,
    /// Model output path.
    #[arg(long)]
    pub out: PathBuf,
    /// Metrics CSV path; defaults to `<out>.metrics.csv`.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    /// Checkpoint path written during training.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Continue from a checkpoint written by an earlier run with the same flags.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// CSV file containing the model's input columns.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = ',')]
    pub delimiter: char,
    /// Include the observation noise in the reported std.
    #[arg(long)]
    pub observation_noise: bool,
    /// Report mean and std in normalized target units.
    #[arg(long)]
    pub normalized_output: bool,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Labelled CSV file.
    #[arg(long)]
    pub data: PathBuf,
    /// Target column; defaults to the one the model was trained on.
    #[arg(long)]
    pub target: Option<String>,
    #[arg(long, default_value_t = ',')]
    pub delimiter: char,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthKind {
    #[value(name = "1d")]
    OneD,
    Highdim,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum)]
    pub kind: SynthKind,
    #[arg(long)]
    pub n: usize,
    #[command(flatten)]
    pub shape: SynthShape,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Directory receiving the exported CSV files.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Grid points in the prediction band (one-input models only).
    #[arg(long, default_value_t = 400)]
    pub grid: usize,
}
