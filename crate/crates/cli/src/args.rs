use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::benchmark;

#[derive(Debug, Parser)]
#[command(name = "lowprec", about = "Low-precision segmentation ensembles", disable_version_flag = true)]
pub struct Cli {
    /// TOML or JSON file supplying default values for any flag.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Print toolkit and file format versions.
    #[arg(long, short = 'V')]
    pub version: bool,

    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    GenData(GenDataArgs),
    /// Train a pool of ensemble members.
    TrainPool(TrainPoolArgs),
    /// Write averaged probability maps and masks.
    Predict(PredictArgs),
    /// Score an ensemble or a directory of predicted masks.
    Evaluate(EvaluateArgs),
    /// Pairwise similarity of member predictions.
    Diversity(DiversityArgs),
    /// Metrics of random K-member ensembles drawn from trained pools.
    SweepK(SweepArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Number of scenes.
    #[arg(long, default_value_t = 76)]
    pub n: usize,
    /// Data master seed.
    #[arg(long, default_value_t = benchmark::DATA_SEED)]
    pub seed: u64,
    /// Split sizes; all three or none (default: 48/12/16 proportions).
    #[arg(long)]
    pub train: Option<usize>,
    #[arg(long)]
    pub val: Option<usize>,
    #[arg(long)]
    pub test: Option<usize>,
    #[arg(long, default_value_t = benchmark::scene_config().width)]
    pub width: usize,
    #[arg(long, default_value_t = benchmark::scene_config().height)]
    pub height: usize,
    #[arg(long, default_value_t = benchmark::scene_config().noise_sigma)]
    pub noise_sigma: f64,
    #[arg(long, default_value_t = benchmark::scene_config().fg_radius_range.0)]
    pub radius_min: usize,
    #[arg(long, default_value_t = benchmark::scene_config().fg_radius_range.1)]
    pub radius_max: usize,
    #[arg(long, default_value_t = benchmark::scene_config().n_distractors_range.0)]
    pub distractors_min: usize,
    #[arg(long, default_value_t = benchmark::scene_config().n_distractors_range.1)]
    pub distractors_max: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Baseline,
    LowprecFixed,
    LowprecRandom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Loss {
    Tversky,
    BalancedCe,
}

#[derive(Debug, Args)]
pub struct TrainPoolArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Mode::LowprecRandom)]
    pub mode: Mode,
    /// Pool size.
    #[arg(long, default_value_t = 12)]
    pub m: usize,
    /// Loss beta for `lowprec-fixed`.
    #[arg(long, default_value_t = 0.95)]
    pub beta: f64,
    #[arg(long, default_value_t = 0.9)]
    pub beta_lo: f64,
    #[arg(long, default_value_t = 1.0)]
    pub beta_hi: f64,
    #[arg(long, default_value_t = 0.8)]
    pub bag_fraction: f64,
    /// Pool master seed.
    #[arg(long, default_value_t = benchmark::POOL_SEED)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Loss::Tversky)]
    pub loss: Loss,
    #[arg(long, default_value_t = benchmark::train_config().epochs)]
    pub epochs: usize,
    #[arg(long, default_value_t = benchmark::train_config().batch_size)]
    pub batch_size: usize,
    #[arg(long, default_value_t = benchmark::train_config().lr)]
    pub lr: f64,
    #[arg(long, default_value_t = benchmark::arch().hidden_channels)]
    pub hidden: usize,
    #[arg(long, default_value_t = benchmark::arch().num_hidden_layers)]
    pub layers: usize,
    #[arg(long, default_value_t = benchmark::arch().kernel_size)]
    pub kernel: usize,
    /// Drop the coordinate input planes.
    #[arg(long)]
    pub no_coords: bool,
    /// Aggregation threshold stored with the pool (default: 0.5 baseline, 0.9 otherwise).
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitName {
    Train,
    Val,
    Test,
    All,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub pool: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Override the pool's aggregation threshold.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long, value_enum, default_value_t = SplitName::Test)]
    pub split: SplitName,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Ensemble to run.
    #[arg(long, conflicts_with = "pred_dir", required_unless_present = "pred_dir")]
    pub pool: Option<PathBuf>,
    /// Directory of masks written by `predict`.
    #[arg(long)]
    pub pred_dir: Option<PathBuf>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long, value_enum, default_value_t = SplitName::Test)]
    pub split: SplitName,
    /// CSV destination (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    pub connectivity: u32,
    #[arg(long, default_value_t = 1)]
    pub min_lesion_size: usize,
}

#[derive(Debug, Args)]
pub struct DiversityArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub pool: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitName::Test)]
    pub split: SplitName,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Pool directory, optionally tagged `NAME=DIR` (default tag: the pool's mode).
    #[arg(long, required = true)]
    pub pool: Vec<String>,
    #[arg(long, value_delimiter = ',', default_values_t = benchmark::sweep_config().k_values)]
    pub k_values: Vec<usize>,
    #[arg(long, default_value_t = benchmark::sweep_config().repetitions)]
    pub repetitions: usize,
    /// Sweep master seed.
    #[arg(long, default_value_t = benchmark::SWEEP_SEED)]
    pub seed: u64,
    /// How repetitions of one K relate: `independent` draws, or `distinct` subsets.
    #[arg(long, default_value = "independent", value_parser = ["independent", "distinct"])]
    pub subset_scheme: String,
    #[arg(long, value_enum, default_value_t = SplitName::Test)]
    pub split: SplitName,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub connectivity: u32,
    #[arg(long, default_value_t = 1)]
    pub min_lesion_size: usize,
}
