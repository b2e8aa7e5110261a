//! Command-line flags. Every value flag is optional here so that a
//! `--config` file can supply it; required values are checked after merging.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use ising_topo::dynamics::GainMode;

#[derive(Debug, Parser)]
#[command(name = "ising-topo", version, about = "Reconstruct kinetic Ising lattices from spin trajectories")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate train/test/generalization datasets.
    Gen(GenArgs),
    /// Train a network on a generated dataset.
    Train(TrainArgs),
    /// Pretrain on one dataset, then continue on another.
    Finetune(FinetuneArgs),
    /// Score a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Accuracy and coverage versus entropy threshold.
    SweepEntropy(SweepEntropyArgs),
    /// Cold start, fine-tuning and baseline across temperatures.
    SweepTemperature(SweepTemperatureArgs),
    /// Correlation-based reconstruction.
    Baseline(BaselineArgs),
    /// Least-squares line through (x, y) points.
    Fit(FitArgs),
    /// Re-execute a run from its manifest.
    Rerun(RerunArgs),
}

#[derive(Debug, Args, Clone, Default)]
pub struct DataFlags {
    /// Number of spins.
    #[arg(long, visible_alias = "L")]
    pub nodes: Option<usize>,
    /// Edges per lattice.
    #[arg(long, visible_alias = "E")]
    pub edges: Option<usize>,
    /// Number of training lattices.
    #[arg(long, visible_alias = "NL")]
    pub lattices: Option<usize>,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_train_per_lattice: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
    /// Unseen lattices for the generalization split.
    #[arg(long)]
    pub gen_lattices: Option<usize>,
    #[arg(long)]
    pub n_gen: Option<usize>,
    #[arg(long, visible_alias = "T")]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    /// Recorded time slices per instance.
    #[arg(long, visible_alias = "M")]
    pub steps: Option<usize>,
    /// `beta-form` (tanh(1/2T)) or `paper-verbatim` (tanh(T/2)).
    #[arg(long)]
    pub gain_mode: Option<GainMode>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct OptimFlags {
    /// Layer string, e.g. `conv3x3:16,relu,pool1x2,flatten,dense:2k,heads`.
    #[arg(long)]
    pub arch: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long = "lr")]
    pub learning_rate: Option<f64>,
    /// Save a resumable checkpoint every N epochs.
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Record the gradient norm of every mini-batch.
    #[arg(long)]
    pub trace_batches: bool,
    #[arg(long)]
    pub plateau_window: Option<usize>,
    #[arg(long)]
    pub plateau_threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataFlags,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub init_seed: Option<u64>,
    /// Dataset directory written by `gen`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Continue from a checkpoint written by `--checkpoint-every`.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[command(flatten)]
    pub optim: OptimFlags,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub init_seed: Option<u64>,
    /// Low-temperature dataset directory.
    #[arg(long)]
    pub pretrain: Option<PathBuf>,
    /// Target-temperature dataset directory.
    #[arg(long)]
    pub target: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub pretrain_epochs: Option<usize>,
    /// Keep Adam moments across the switch.
    #[arg(long)]
    pub carry_optimizer: bool,
    #[command(flatten)]
    pub optim: OptimFlags,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// `train`, `test` or `generalization`.
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SweepEntropyArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `report.csv` written by `eval`.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// `start:stop:step` or a comma-separated list.
    #[arg(long)]
    pub thresholds: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepTemperatureArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated temperatures.
    #[arg(long, value_delimiter = ',')]
    pub temperatures: Option<Vec<f64>>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Temperatures run concurrently.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub pretrain_temperature: Option<f64>,
    #[arg(long)]
    pub pretrain_epochs: Option<usize>,
    #[arg(long)]
    pub lag: Option<u8>,
    #[arg(long)]
    pub pooling: Option<String>,
    #[command(flatten)]
    pub data: DataFlags,
    #[command(flatten)]
    pub optim: OptimFlags,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// 0 or 1.
    #[arg(long)]
    pub lag: Option<u8>,
    /// `lattice` or `instance`.
    #[arg(long)]
    pub pooling: Option<String>,
    /// Pool each lattice's training instances into its correlations.
    #[arg(long)]
    pub include_train: bool,
    #[arg(long)]
    pub edges: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub points: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub x: Option<String>,
    #[arg(long)]
    pub y: Option<String>,
}

#[derive(Debug, Args)]
pub struct RerunArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory for the replay.
    #[arg(long)]
    pub out: PathBuf,
}
