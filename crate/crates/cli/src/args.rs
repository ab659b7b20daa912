use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "spn",
    version,
    about = "Shuffled group convolution networks for point clouds"
)]
pub struct Cli {
    /// Worker threads for data-parallel kernels.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a classifier or segmenter and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Predict per-point part labels for one cloud.
    Segment(SegmentArgs),
    /// Report analytic parameter and FLOP counts.
    Complexity(ComplexityArgs),
    /// Run the finite-difference gradient suite.
    Gradcheck(GradcheckArgs),
    /// Compare brute-force and k-d tree k-NN.
    BenchKnn(BenchKnnArgs),
    /// Write the synthetic dataset to disk.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EdgeVariantArg {
    A,
    B,
    C,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum NeighborArg {
    Knn,
    Radius,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Classify,
    Segment,
}

/// Overrides applied on top of the default model configuration.
#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    /// Group count of every SGC unit.
    #[arg(long)]
    pub groups: Option<usize>,
    /// Neighbors per center in every stage.
    #[arg(long)]
    pub k: Option<usize>,
    /// Points per input cloud.
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long, value_enum)]
    pub edge_variant: Option<EdgeVariantArg>,
    #[arg(long, value_enum)]
    pub neighbor: Option<NeighborArg>,
    /// Base ball radius for radius neighbors; doubles per stage.
    #[arg(long)]
    pub radius: Option<f64>,
    /// Make the first layer of each SGC unit ungrouped so every group sees
    /// all edge channels.
    #[arg(long)]
    pub shared_input: bool,
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Use the generated synthetic dataset.
    #[arg(long, conflicts_with = "data")]
    pub synth: bool,
    /// Cloud file, or a directory of `.spnc`/`.txt` clouds with an optional
    /// `part_sets.json`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Synthetic clouds per class.
    #[arg(long, default_value_t = 200)]
    pub per_class: usize,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value_t = TaskArg::Classify)]
    pub task: TaskArg,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 30)]
    pub epochs: u32,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    /// Fraction of each class held out for evaluation.
    #[arg(long, default_value_t = 0.2)]
    pub holdout: f64,
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Seed for the synthetic dataset.
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    /// Write metrics JSON into this directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SegmentArgs {
    /// Segmenter checkpoint.
    #[arg(long)]
    pub model: PathBuf,
    /// Input cloud.
    #[arg(long)]
    pub data: PathBuf,
    /// Output text cloud with a predicted label column.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ComplexityArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_enum, default_value_t = TaskArg::Classify)]
    pub task: TaskArg,
    /// Comma-separated group counts to compare, e.g. 1,2,4,8.
    #[arg(long, value_delimiter = ',')]
    pub sweep_groups: Option<Vec<usize>>,
    /// Also time eval-mode forward passes on a synthetic cloud.
    #[arg(long)]
    pub time: bool,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Write JSON and table reports into this directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Write the case table as JSON into this directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Flip the backward sign of one op kind.
    #[arg(long, hide = true, value_name = "OP")]
    pub inject_fault: Option<String>,
}

#[derive(Args, Debug)]
pub struct BenchKnnArgs {
    #[arg(long, value_delimiter = ',', default_value = "1000,4000,16000")]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    pub k: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Write the timing table as CSV into this directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 200)]
    pub per_class: usize,
    #[arg(long, default_value_t = 256)]
    pub points: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}
