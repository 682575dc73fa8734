//! Mini-batch Adam training with validation early stopping.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AceFormer, ChannelDenoise};
use crate::autodiff::{Adam, Tensor};
use crate::par::{self, Exec};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 32,
            max_epochs: 200,
            patience: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate must be finite and >= 0, got {}", self.learning_rate));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return fail(format!("betas must lie in [0, 1), got {} and {}", self.beta1, self.beta2));
        }
        if !(self.adam_eps > 0.0) {
            return fail(format!("adam_eps must be positive, got {}", self.adam_eps));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return fail("batch_size and max_epochs must be at least 1".into());
        }
        Ok(())
    }
}

/// One training sample: a normalized `(window, F)` block and its `p`
/// normalized target closes.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: Tensor,
    pub targets: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-sample loss seen during the epoch (before each update).
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub model: AceFormer,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub steps: usize,
}

/// Mean MSE of `model` over `set`.
pub fn evaluate_mse(model: &AceFormer, set: &[Example], exec: Exec) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty set"));
    }
    let losses = par::try_map_range(exec, set.len(), |i| {
        model.loss(&set[i].features, &set[i].targets, ChannelDenoise::Configured)
    })?;
    Ok(losses.iter().sum::<f64>() / set.len() as f64)
}

/// Trains a copy of `model` on `train_set`. Validation loss drives early
/// stopping; with an empty `val_set` the training set is re-scored instead.
///
/// Per-sample gradients may be computed in parallel under `exec`; they are
/// summed in sample order, so the result does not depend on the schedule.
pub fn train(
    model: &AceFormer,
    train_set: &[Example],
    val_set: &[Example],
    config: &TrainConfig,
    exec: Exec,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let mut current = model.clone();
    let mut best = model.clone();
    let mut best_loss = f64::INFINITY;
    let mut best_epoch = 0;
    let mut stale = 0;
    let mut adam = Adam::new(config.learning_rate, config.beta1, config.beta2, config.adam_eps);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::new();
    let mut steps = 0;

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let per_sample = par::try_map_range(exec, batch.len(), |i| {
                let ex = &train_set[batch[i]];
                current.loss_and_grads(&ex.features, &ex.targets, ChannelDenoise::Configured)
            })?;
            let scale = 1.0 / batch.len() as f64;
            let mut grads: Vec<Vec<f64>> = current.params().iter().map(|t| vec![0.0; t.len()]).collect();
            for (loss, g) in &per_sample {
                epoch_loss += loss;
                for (acc, gi) in grads.iter_mut().zip(g) {
                    for (a, v) in acc.iter_mut().zip(gi) {
                        *a += v * scale;
                    }
                }
            }
            adam.step(current.params_mut(), &grads);
            steps += 1;
        }
        let train_loss = epoch_loss / train_set.len() as f64;
        let monitor = if val_set.is_empty() { train_set } else { val_set };
        let val_loss = evaluate_mse(&current, monitor, exec)?;
        if !(train_loss.is_finite() && val_loss.is_finite()) {
            return Err(Error::NonFinite { op: "training loss" });
        }
        history.push(EpochRecord { epoch, train_loss, val_loss });
        if val_loss < best_loss {
            best_loss = val_loss;
            best = current.clone();
            best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    Ok(TrainOutcome { model: best, history, best_epoch, steps })
}
