use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::dataset::Split;

#[derive(Debug, Parser)]
#[command(name = "rpn3d", version, about = "Anchor-based 3D landmark detection pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a phantom dataset with a train/test manifest.
    Synth(SynthArgs),
    /// Fit the distance-ratio prior on a dataset's training landmarks.
    FitPrior(FitPriorArgs),
    /// Train the detection heads.
    Train(TrainArgs),
    /// Write per-volume detections.
    Detect(DetectArgs),
    /// Evaluate detections against ground truth.
    Eval(EvalArgs),
    /// Train and evaluate the IoU-balance × prior grid.
    Ablate(AblateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Toggle {
    On,
    Off,
}

impl Toggle {
    pub fn on(self) -> bool {
        self == Toggle::On
    }
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    /// JSON run configuration; command-line flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub n: Option<usize>,
    /// Edge length of the cubic volume, or three comma-separated lengths.
    #[arg(long, value_delimiter = ',', num_args = 1..=3)]
    pub dims: Option<Vec<usize>>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of test volumes.
    #[arg(long)]
    pub test: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    /// Overwrite a non-empty output directory.
    #[arg(long)]
    pub force: bool,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Args)]
pub struct FitPriorArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Output file for the trained heads.
    #[arg(long)]
    pub params: PathBuf,
    #[arg(long, value_enum)]
    pub iou_balance: Option<Toggle>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Loss curve and configuration.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub params: PathBuf,
    #[arg(long)]
    pub prior: PathBuf,
    #[arg(long, value_enum)]
    pub prior_filter: Option<Toggle>,
    #[arg(long, value_enum, default_value = "test")]
    pub split: Split,
    /// Directory receiving `<volume>.detections.json` files.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, required_unless_present = "oracle")]
    pub params: Option<PathBuf>,
    #[arg(long, required_unless_present = "oracle")]
    pub prior: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub prior_filter: Option<Toggle>,
    #[arg(long, value_enum, default_value = "test")]
    pub split: Split,
    /// Use the ground-truth boxes as predictions.
    #[arg(long)]
    pub oracle: bool,
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// `full`, or comma-separated `iou_balance:prior_filter` pairs such as `on:on,off:off`.
    #[arg(long, default_value = "full")]
    pub grid: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub force: bool,
    #[command(flatten)]
    pub config: ConfigArg,
}
