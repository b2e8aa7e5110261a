//! Resolved run configurations.
//!
//! Every command starts from defaults, applies an optional TOML file given
//! with `--config`, then applies explicit flags. The resolved value is what
//! the manifest records and what `rerun` replays.

use std::path::{Path, PathBuf};

use anyhow::Context;
use ising_topo::dataset::DatasetSpec;
use ising_topo::dynamics::{GainMode, SimParams};
use ising_topo::nn::{AdamConfig, DEFAULT_ARCH};
use ising_topo::train::TrainConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// A missing or contradictory flag; reported with exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub fn require<T: Clone>(v: &Option<T>, flag: &str) -> anyhow::Result<T> {
    v.clone().ok_or_else(|| usage(format!("missing required flag --{flag} (or `{}` in the config file)", flag.replace('-', "_"))))
}

pub fn load_file<T: DeserializeOwned + Default>(path: Option<&Path>) -> anyhow::Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            toml::from_str(&text).map_err(|e| usage(format!("config {}: {e}", p.display())))
        }
    }
}

/// Overwrites `dst.field` with every flag that was given.
#[macro_export]
macro_rules! apply_flags {
    ($dst:expr, $src:expr; $($field:ident),* $(,)?) => {
        $( if let Some(v) = $src.$field.clone() { $dst.$field = v; } )*
    };
}

/// Same as [`apply_flags!`] for optional destination fields.
#[macro_export]
macro_rules! apply_opt_flags {
    ($dst:expr, $src:expr; $($field:ident),* $(,)?) => {
        $( if let Some(v) = $src.$field.clone() { $dst.$field = Some(v); } )*
    };
}

/// Absolute form of a path; inputs must exist.
pub fn absolute(p: &Path) -> anyhow::Result<PathBuf> {
    if p.exists() {
        return p.canonicalize().with_context(|| format!("resolving {}", p.display()));
    }
    Ok(std::env::current_dir()?.join(p))
}

pub fn existing(p: &Path) -> anyhow::Result<PathBuf> {
    if !p.exists() {
        anyhow::bail!("{} does not exist", p.display());
    }
    absolute(p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub nodes: usize,
    pub edges: usize,
    pub lattices: usize,
    pub n_train: Option<usize>,
    pub n_train_per_lattice: Option<usize>,
    pub n_test: usize,
    pub gen_lattices: usize,
    pub n_gen: usize,
    pub temperature: f64,
    pub tau: f64,
    pub steps: usize,
    pub gain_mode: GainMode,
}

impl Default for DataConfig {
    fn default() -> Self {
        let sim = SimParams::default();
        Self {
            nodes: 12,
            edges: 25,
            lattices: 5,
            n_train: None,
            n_train_per_lattice: None,
            n_test: 300,
            gen_lattices: 0,
            n_gen: 0,
            temperature: sim.temperature,
            tau: sim.tau,
            steps: sim.steps,
            gain_mode: sim.gain_mode,
        }
    }
}

impl DataConfig {
    pub fn spec(&self, seed: u64) -> DatasetSpec {
        let n_train = match (self.n_train, self.n_train_per_lattice) {
            (None, None) => Some(2500),
            (t, _) => t,
        };
        DatasetSpec {
            nodes: self.nodes,
            edges: self.edges,
            lattices: self.lattices,
            n_train,
            n_train_per_lattice: self.n_train_per_lattice,
            n_test: self.n_test,
            gen_lattices: self.gen_lattices,
            n_gen: self.n_gen,
            sim: SimParams {
                temperature: self.temperature,
                tau: self.tau,
                steps: self.steps,
                gain_mode: self.gain_mode,
            },
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub arch: String,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub checkpoint_every: usize,
    pub trace_batches: bool,
    pub plateau_window: usize,
    pub plateau_threshold: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            arch: DEFAULT_ARCH.to_string(),
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.adam.learning_rate,
            checkpoint_every: 0,
            trace_batches: false,
            plateau_window: 50,
            plateau_threshold: 1e-2,
        }
    }
}

impl OptimConfig {
    pub fn train_config(&self, epochs: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: self.batch_size,
            adam: AdamConfig {
                learning_rate: self.learning_rate,
                ..AdamConfig::default()
            },
            seed,
            checkpoint_every: self.checkpoint_every,
            trace_batches: self.trace_batches,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub data: DataConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainRunConfig {
    pub seed: Option<u64>,
    /// Weight initialization seed; defaults to `seed`.
    pub init_seed: Option<u64>,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub resume: Option<PathBuf>,
    pub optim: OptimConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    pub seed: Option<u64>,
    pub init_seed: Option<u64>,
    pub pretrain: Option<PathBuf>,
    pub target: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub pretrain_epochs: usize,
    pub carry_optimizer: bool,
    pub optim: OptimConfig,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            seed: None,
            init_seed: None,
            pretrain: None,
            target: None,
            out: None,
            pretrain_epochs: 200,
            carry_optimizer: false,
            optim: OptimConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub checkpoint: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub split: String,
    pub out: Option<PathBuf>,
    pub batch_size: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            checkpoint: None,
            data: None,
            split: "test".into(),
            out: None,
            batch_size: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepEntropyConfig {
    pub report: Option<PathBuf>,
    /// `start:stop:step` or a comma-separated list.
    pub thresholds: String,
    pub out: Option<PathBuf>,
}

impl Default for SweepEntropyConfig {
    fn default() -> Self {
        Self {
            report: None,
            thresholds: "0.05:0.7:0.05".into(),
            out: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepTemperatureConfig {
    pub seed: Option<u64>,
    pub temperatures: Vec<f64>,
    pub out: Option<PathBuf>,
    pub jobs: usize,
    /// Also fine-tune from a model pretrained at this temperature.
    pub pretrain_temperature: Option<f64>,
    pub pretrain_epochs: usize,
    pub lag: u8,
    pub pooling: String,
    pub data: DataConfig,
    pub optim: OptimConfig,
}

impl Default for SweepTemperatureConfig {
    fn default() -> Self {
        Self {
            seed: None,
            temperatures: Vec::new(),
            out: None,
            jobs: 1,
            pretrain_temperature: None,
            pretrain_epochs: 200,
            lag: 1,
            pooling: "lattice".into(),
            data: DataConfig::default(),
            optim: OptimConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub data: Option<PathBuf>,
    pub split: String,
    pub out: Option<PathBuf>,
    pub lag: u8,
    pub pooling: String,
    /// Pool the training instances of each lattice into its correlations.
    pub include_train: bool,
    /// Predicted edge count; defaults to the dataset's.
    pub edges: Option<usize>,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            data: None,
            split: "test".into(),
            out: None,
            lag: 1,
            pooling: "lattice".into(),
            include_train: false,
            edges: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub points: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Column names; the first two columns when absent.
    pub x: Option<String>,
    pub y: Option<String>,
}
