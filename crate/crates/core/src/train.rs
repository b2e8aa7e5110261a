//! Mini-batch training, the temperature curriculum and gradient traces.
//!
//! Every epoch visits the training set in an order drawn from
//! `(seed, epoch)` alone, so a run resumed from a checkpoint replays the
//! exact batches the uninterrupted run would have seen.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::nn::{adam_step, AdamConfig, AdamState, Checkpoint, Model};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Seeds the per-epoch shuffles.
    pub seed: u64,
    /// Write a checkpoint every this many epochs; 0 disables.
    pub checkpoint_every: usize,
    /// Keep the gradient norm of every mini-batch, not only epoch means.
    pub trace_batches: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 64,
            adam: AdamConfig::default(),
            seed: 0,
            checkpoint_every: 0,
            trace_batches: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        let a = &self.adam;
        if !(a.learning_rate > 0.0 && a.learning_rate.is_finite()) {
            return Err(Error::invalid(format!("learning rate {}", a.learning_rate)));
        }
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.epsilon > 0.0) {
            return Err(Error::invalid("Adam betas must lie in [0, 1) and epsilon be positive"));
        }
        Ok(())
    }
}

/// Epoch numbers are 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training loss over the epoch's mini-batches, each measured
    /// before its update.
    pub loss: f64,
    /// Training accuracy from the same pre-update forward passes.
    pub train_gamma: f64,
    pub test_gamma: Option<f64>,
    /// Mean gradient norm over the epoch's mini-batches.
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub batch_grad_norms: Vec<f64>,
}

impl TrainHistory {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    pub fn grad_norms(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.grad_norm).collect()
    }

    pub fn extend(&mut self, other: TrainHistory) {
        self.epochs.extend(other.epochs);
        self.batch_grad_norms.extend(other.batch_grad_norms);
    }

    /// `epoch,loss,train_gamma,test_gamma,grad_norm`; a missing test
    /// accuracy is left empty.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,loss,train_gamma,test_gamma,grad_norm\n");
        for e in &self.epochs {
            let test = e.test_gamma.map(|g| g.to_string()).unwrap_or_default();
            let _ = writeln!(s, "{},{},{},{},{}", e.epoch, e.loss, e.train_gamma, test, e.grad_norm);
        }
        s
    }

    /// Flags epoch `e` when the mean gradient norm over the trailing
    /// `window` epochs (fewer at the start) is below `threshold`.
    pub fn plateau_flags(&self, window: usize, threshold: f64) -> Vec<bool> {
        plateau_flags(&self.grad_norms(), window, threshold)
    }
}

pub fn plateau_flags(norms: &[f64], window: usize, threshold: f64) -> Vec<bool> {
    let w = window.max(1);
    (0..norms.len())
        .map(|e| {
            let lo = (e + 1).saturating_sub(w);
            let s = &norms[lo..=e];
            s.iter().sum::<f64>() / (s.len() as f64) < threshold
        })
        .collect()
}

/// First 1-based epoch at which a flagged run ends, if any.
pub fn plateau_exit(flags: &[bool]) -> Option<usize> {
    flags.windows(2).position(|w| w[0] && !w[1]).map(|i| i + 2)
}

pub struct Trainer {
    model: Model<f32>,
    optimizer: AdamState<f32>,
    epochs_done: usize,
    config: TrainConfig,
    checkpoint_path: Option<PathBuf>,
}

impl Trainer {
    pub fn new(model: Model<f32>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let optimizer = AdamState::new(model.params());
        Ok(Self {
            model,
            optimizer,
            epochs_done: 0,
            config,
            checkpoint_path: None,
        })
    }

    /// Continues from a checkpoint; a checkpoint without optimizer state
    /// starts Adam afresh.
    pub fn resume(ckpt: Checkpoint, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let optimizer = ckpt.optimizer.unwrap_or_else(|| AdamState::new(ckpt.model.params()));
        Ok(Self {
            model: ckpt.model,
            optimizer,
            epochs_done: ckpt.epochs,
            config,
            checkpoint_path: None,
        })
    }

    pub fn with_checkpoints(mut self, path: impl AsRef<Path>) -> Self {
        self.checkpoint_path = Some(path.as_ref().to_path_buf());
        self
    }

    pub fn model(&self) -> &Model<f32> {
        &self.model
    }

    pub fn into_model(self) -> Model<f32> {
        self.model
    }

    pub fn optimizer(&self) -> &AdamState<f32> {
        &self.optimizer
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            optimizer: Some(self.optimizer.clone()),
            epochs: self.epochs_done,
        }
    }

    fn check_data(&self, data: &Dataset, what: &str) -> Result<()> {
        if data.is_empty() {
            return Err(Error::Empty(format!("{what} set")));
        }
        if data.nodes() != self.model.nodes() || data.steps() != self.model.steps() {
            return Err(Error::dim(format!(
                "{what} set is {}x{}, model expects {}x{}",
                data.nodes(),
                data.steps(),
                self.model.nodes(),
                self.model.steps()
            )));
        }
        Ok(())
    }

    pub fn run_epoch(&mut self, train: &Dataset, test: Option<&Dataset>) -> Result<(EpochRecord, Vec<f64>)> {
        self.check_data(train, "training")?;
        if let Some(t) = test {
            self.check_data(t, "test")?;
        }
        let epoch = self.epochs_done;
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);

        let heads = self.model.heads();
        let (mut loss_sum, mut hits, mut norms) = (0.0, 0usize, Vec::new());
        for (bi, batch) in order.chunks(self.config.batch_size).enumerate() {
            let inputs: Vec<&[f32]> = batch.iter().map(|&i| train.samples[i].input()).collect();
            let labels: Vec<&[bool]> = batch.iter().map(|&i| train.samples[i].target()).collect();
            let g = self.model.backward(&inputs, &labels)?;
            if !g.loss.is_finite() {
                return Err(Error::Diverged {
                    epoch: epoch + 1,
                    batch: bi,
                    loss: g.loss,
                });
            }
            loss_sum += g.loss * batch.len() as f64;
            hits += count_hits(&g.probs, &labels, heads);
            norms.push(g.norm());
            adam_step(self.model.params_mut(), &g.grads, &mut self.optimizer, &self.config.adam)?;
        }
        self.epochs_done += 1;
        let test_gamma = test.map(|t| test_accuracy(&self.model, t, self.config.batch_size)).transpose()?;
        let record = EpochRecord {
            epoch: self.epochs_done,
            loss: loss_sum / train.len() as f64,
            train_gamma: hits as f64 / (train.len() * heads) as f64,
            test_gamma,
            grad_norm: norms.iter().sum::<f64>() / norms.len() as f64,
        };
        if let Some(path) = &self.checkpoint_path {
            let every = self.config.checkpoint_every;
            if every > 0 && self.epochs_done.is_multiple_of(every) {
                self.checkpoint().save(path)?;
            }
        }
        Ok((record, norms))
    }

    /// Trains until `config.epochs` epochs have completed in total.
    pub fn run(&mut self, train: &Dataset, test: Option<&Dataset>) -> Result<TrainHistory> {
        self.run_with(train, test, |_| {})
    }

    /// Like [`Trainer::run`], calling `on_epoch` after every epoch.
    pub fn run_with(
        &mut self,
        train: &Dataset,
        test: Option<&Dataset>,
        mut on_epoch: impl FnMut(&EpochRecord),
    ) -> Result<TrainHistory> {
        let mut h = TrainHistory::default();
        while self.epochs_done < self.config.epochs {
            let (rec, norms) = self.run_epoch(train, test)?;
            on_epoch(&rec);
            h.epochs.push(rec);
            if self.config.trace_batches {
                h.batch_grad_norms.extend(norms);
            }
        }
        Ok(h)
    }
}

fn count_hits(probs: &[f32], labels: &[&[bool]], heads: usize) -> usize {
    labels
        .iter()
        .enumerate()
        .map(|(n, q)| {
            q.iter()
                .enumerate()
                .filter(|&(k, &t)| {
                    let p = &probs[(n * heads + k) * 2..][..2];
                    (p[1] > p[0]) == t
                })
                .count()
        })
        .sum()
}

/// Pooled accuracy of `model` on `data`.
pub fn test_accuracy(model: &Model<f32>, data: &Dataset, batch_size: usize) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty("evaluation set".into()));
    }
    let heads = model.heads();
    let mut hits = 0;
    for chunk in data.samples.chunks(batch_size.max(1)) {
        let inputs: Vec<&[f32]> = chunk.iter().map(|s| s.input()).collect();
        let labels: Vec<&[bool]> = chunk.iter().map(|s| s.target()).collect();
        hits += count_hits(&model.forward_raw(&inputs)?, &labels, heads);
    }
    Ok(hits as f64 / (data.len() * heads) as f64)
}

/// Trains `model` from scratch with fresh optimizer state.
pub fn train(model: Model<f32>, train: &Dataset, test: Option<&Dataset>, config: &TrainConfig) -> Result<(Model<f32>, TrainHistory)> {
    let mut t = Trainer::new(model, *config)?;
    let h = t.run(train, test)?;
    Ok((t.into_model(), h))
}

/// Continues training a checkpoint on a new dataset. Epoch counting
/// restarts at zero; Adam moments are kept only when `carry_optimizer` is
/// set and the checkpoint has them.
pub fn continue_training(
    start: Checkpoint,
    train: &Dataset,
    test: Option<&Dataset>,
    config: &TrainConfig,
    carry_optimizer: bool,
) -> Result<(Model<f32>, TrainHistory)> {
    let optimizer = if carry_optimizer { start.optimizer } else { None };
    let ckpt = Checkpoint {
        model: start.model,
        optimizer,
        epochs: 0,
    };
    let mut t = Trainer::resume(ckpt, *config)?;
    let h = t.run(train, test)?;
    Ok((t.into_model(), h))
}

/// Epoch budgets of the two curriculum stages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Curriculum {
    /// May run zero epochs, which reduces the curriculum to a cold start.
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
    /// Keep Adam moments across the switch instead of resetting them.
    pub carry_optimizer: bool,
}

/// A training set and optional test set for one stage.
#[derive(Debug, Clone, Copy)]
pub struct Stage<'a> {
    pub train: &'a Dataset,
    pub test: Option<&'a Dataset>,
}

/// Trains on the low-temperature stage, then continues with the same
/// parameters on the high-temperature stage.
pub fn fine_tune(
    model: Model<f32>,
    low: Stage<'_>,
    high: Stage<'_>,
    cur: &Curriculum,
) -> Result<(Model<f32>, TrainHistory, TrainHistory)> {
    let shape = |d: &Dataset| (d.nodes(), d.steps());
    if shape(low.train) != shape(high.train) {
        return Err(Error::dim(format!(
            "pretraining data is {:?} but target data is {:?}",
            shape(low.train),
            shape(high.train)
        )));
    }
    let (start, pre_history) = if cur.pretrain.epochs == 0 {
        cur.pretrain_config_check()?;
        (Checkpoint::model_only(model), TrainHistory::default())
    } else {
        let mut t = Trainer::new(model, cur.pretrain)?;
        let h = t.run(low.train, low.test)?;
        (t.checkpoint(), h)
    };
    let (model, ft_history) = continue_training(start, high.train, high.test, &cur.finetune, cur.carry_optimizer)?;
    Ok((model, pre_history, ft_history))
}

impl Curriculum {
    fn pretrain_config_check(&self) -> Result<()> {
        TrainConfig {
            epochs: 1,
            ..self.pretrain
        }
        .validate()
    }
}

/// Mean mini-batch gradient norm at fixed parameters, batches in data order.
pub fn mean_gradient_norm(model: &Model<f32>, data: &Dataset, batch_size: usize) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty("data set".into()));
    }
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let norms = par::map_indexed(data.len().div_ceil(batch_size), |b| {
        let idx = b * batch_size..((b + 1) * batch_size).min(data.len());
        let inputs: Vec<&[f32]> = data.samples[idx.clone()].iter().map(|s| s.input()).collect();
        let labels: Vec<&[bool]> = data.samples[idx].iter().map(|s| s.target()).collect();
        model.backward(&inputs, &labels).map(|g| g.norm())
    });
    let norms = norms.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(norms.iter().sum::<f64>() / norms.len() as f64)
}

/// Per-epoch mean gradient norms of a training run on a copy of `model`;
/// zero epochs give an empty trace.
pub fn gradient_norm_trace(model: &Model<f32>, data: &Dataset, config: &TrainConfig) -> Result<Vec<f64>> {
    if config.epochs == 0 {
        return Ok(Vec::new());
    }
    let (_, h) = train(model.clone(), data, None, config)?;
    Ok(h.grad_norms())
}
