//! Temperature-point experiments shared by `sweep-temperature` and the
//! acceptance suite.

use ising_topo::baseline::{reconstruct_dataset, Lag, Pooling};
use ising_topo::dataset::{build_splits, Splits};
use ising_topo::eval::density_guess_accuracy;
use ising_topo::nn::{Architecture, Checkpoint, Model};
use ising_topo::pairs::pair_count;
use ising_topo::train::{continue_training, mean_gradient_norm, test_accuracy, TrainHistory, Trainer};

use crate::config::{DataConfig, OptimConfig};

pub struct PointSettings<'a> {
    pub data: &'a DataConfig,
    pub optim: &'a OptimConfig,
    pub seed: u64,
    pub lag: Lag,
    pub pooling: Pooling,
}

#[derive(Debug, Clone)]
pub struct PointResult {
    pub temperature: f64,
    pub cold_history: TrainHistory,
    pub gamma_cold: f64,
    pub finetune_history: Option<TrainHistory>,
    pub gamma_finetuned: Option<f64>,
    /// Mean mini-batch gradient norm of the pretrained model on this
    /// temperature's training set, before any update.
    pub finetune_start_grad_norm: Option<f64>,
    pub gamma_baseline: f64,
    pub density_guess: f64,
}

/// A model pretrained at a low temperature, shared across points.
pub struct Pretrained {
    pub checkpoint: Checkpoint,
    pub history: TrainHistory,
    pub epochs: usize,
}

pub fn splits_at(data: &DataConfig, temperature: f64, seed: u64) -> anyhow::Result<Splits> {
    let cfg = DataConfig {
        temperature,
        ..data.clone()
    };
    Ok(build_splits(&cfg.spec(seed))?)
}

pub fn fresh_model(s: &PointSettings<'_>) -> anyhow::Result<Model<f32>> {
    let arch: Architecture = s.optim.arch.parse()?;
    Ok(Model::new(arch, s.data.nodes, s.data.steps, s.seed)?)
}

pub fn pretrain(s: &PointSettings<'_>, temperature: f64, epochs: usize) -> anyhow::Result<Pretrained> {
    let low = splits_at(s.data, temperature, s.seed)?;
    let mut t = Trainer::new(fresh_model(s)?, s.optim.train_config(epochs, s.seed))?;
    let history = t.run(&low.train, Some(&low.test))?;
    Ok(Pretrained {
        checkpoint: t.checkpoint(),
        history,
        epochs,
    })
}

/// Cold start with the full epoch budget, optional fine-tuning from
/// `pretrained` with the remaining budget, and the correlation baseline.
pub fn run_point(
    s: &PointSettings<'_>,
    temperature: f64,
    pretrained: Option<&Pretrained>,
) -> anyhow::Result<PointResult> {
    let splits = splits_at(s.data, temperature, s.seed)?;
    let budget = s.optim.epochs + pretrained.map_or(0, |p| p.epochs);
    let mut cold = Trainer::new(fresh_model(s)?, s.optim.train_config(budget, s.seed))?;
    let cold_history = cold.run(&splits.train, Some(&splits.test))?;
    let gamma_cold = test_accuracy(cold.model(), &splits.test, s.optim.batch_size)?;

    let (finetune_history, gamma_finetuned, finetune_start_grad_norm) = match pretrained {
        Some(p) => {
            let start = mean_gradient_norm(&p.checkpoint.model, &splits.train, s.optim.batch_size)?;
            let (m, h) = continue_training(
                p.checkpoint.clone(),
                &splits.train,
                Some(&splits.test),
                &s.optim.train_config(s.optim.epochs, s.seed),
                false,
            )?;
            let g = test_accuracy(&m, &splits.test, s.optim.batch_size)?;
            (Some(h), Some(g), Some(start))
        }
        None => (None, None, None),
    };

    let base = reconstruct_dataset(&splits.test, &[&splits.train], s.lag, s.pooling, s.data.edges)?;
    Ok(PointResult {
        temperature,
        cold_history,
        gamma_cold,
        finetune_history,
        gamma_finetuned,
        finetune_start_grad_norm,
        gamma_baseline: base.gamma,
        density_guess: density_guess_accuracy(pair_count(s.data.nodes), s.data.edges),
    })
}
