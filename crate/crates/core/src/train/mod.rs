//! Deterministic training: seeded shuffling, minibatch RMSprop on the MSE
//! loss, per-epoch history, and best-dev tracking.

pub mod checkpoint;
pub mod gradcheck;
pub mod loss;
pub mod rmsprop;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use gradcheck::{gradcheck, GradcheckReport};
pub use loss::mse_loss;
pub use rmsprop::{rmsprop_step, RmspropState};

use ndarray::Array1;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::corpus::Example;
use crate::error::{Error, Result};
use crate::eval::{clamp_grade, rmse};
use crate::net::{
    model_backward, model_forward, update_running, Mode, ModelConfig, ModelState, SummaryMode,
};

/// Everything that shapes a training run. Paths live one level up in the
/// command layer; this is the numeric core.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// RMSprop decay.
    pub rho: f64,
    /// RMSprop denominator guard.
    pub eps: f64,
    pub seq_len: usize,
    pub hidden: usize,
    pub dim: usize,
    pub seed: u64,
    pub shuffle: bool,
    /// Clamp predictions to [0, 3] in evaluation and prediction output.
    pub clamp_eval: bool,
    /// Mean-pool the BiLSTM outputs instead of last/first concatenation.
    pub mean_pool: bool,
    pub relu_head: bool,
    pub bn_epsilon: f64,
    pub bn_momentum: f64,
    /// Optional global-norm gradient cap; off by default.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            epochs: 100,
            batch_size: 128,
            learning_rate: 0.001,
            rho: 0.9,
            eps: 1e-8,
            seq_len: 20,
            hidden: 128,
            dim: 300,
            seed: 42,
            shuffle: true,
            clamp_eval: true,
            mean_pool: false,
            relu_head: false,
            bn_epsilon: 1e-3,
            bn_momentum: 0.99,
            clip_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive: [(&str, f64); 7] = [
            ("batch_size", self.batch_size as f64),
            ("learning_rate", self.learning_rate),
            ("eps", self.eps),
            ("seq_len", self.seq_len as f64),
            ("hidden", self.hidden as f64),
            ("dim", self.dim as f64),
            ("bn_epsilon", self.bn_epsilon),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.batch_size < 2 {
            return Err(Error::Config(
                "batch_size must be at least 2 (batch norm needs batch statistics)".into(),
            ));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::Config(format!(
                "rho must be in (0, 1), got {}",
                self.rho
            )));
        }
        if !(0.0..1.0).contains(&self.bn_momentum) {
            return Err(Error::Config(format!(
                "bn_momentum must be in [0, 1), got {}",
                self.bn_momentum
            )));
        }
        if let Some(cap) = self.clip_norm {
            if !(cap > 0.0) {
                return Err(Error::Config(format!(
                    "clip_norm must be positive, got {cap}"
                )));
            }
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            seq_len: self.seq_len,
            dim: self.dim,
            hidden: self.hidden,
            summary: if self.mean_pool {
                SummaryMode::MeanPool
            } else {
                SummaryMode::LastFirst
            },
            relu_head: self.relu_head,
            bn_epsilon: self.bn_epsilon,
            bn_momentum: self.bn_momentum,
        }
    }
}

/// One history row. `train_mse` averages the per-batch losses weighted by
/// batch size, i.e. the mean squared error over every example stepped on.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_mse: f64,
    pub dev_rmse: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// State after the final epoch.
    pub model: ModelState<f32>,
    /// Snapshot with the best dev RMSE (the final state when no dev set).
    pub best_model: ModelState<f32>,
    pub best_epoch: usize,
    pub opt: RmspropState<f32>,
    pub history: Vec<EpochStats>,
    /// PRNG as it stands after the run, for checkpointing.
    pub rng: ChaCha8Rng,
}

fn batch_targets(batch: &[Example]) -> Array1<f32> {
    Array1::from_iter(
        batch
            .iter()
            .map(|ex| ex.target.expect("validated labeled") as f32),
    )
}

/// Infer-mode predictions over `examples`, in order, batched for cache
/// locality. Raw model outputs; no clamping here.
pub fn predict<F: crate::Scalar>(
    examples: &[Example],
    model: &ModelState<F>,
    batch_size: usize,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(batch_size.max(1)) {
        let fwd = model_forward(chunk, model, Mode::Infer)?;
        out.extend(fwd.preds.iter().map(|p| p.to_f()));
    }
    Ok(out)
}

/// Dev-set RMSE under the configured clamping rule.
fn dev_rmse(dev: &[Example], model: &ModelState<f32>, config: &TrainConfig) -> Result<f64> {
    let mut preds = predict(dev, model, config.batch_size)?;
    if config.clamp_eval {
        for p in preds.iter_mut() {
            *p = clamp_grade(*p);
        }
    }
    let truth: Vec<f64> = dev
        .iter()
        .map(|ex| ex.target.expect("validated labeled"))
        .collect();
    rmse(&preds, &truth)
}

fn global_norm(grads: &crate::net::ModelGrads<f32>) -> f64 {
    grads
        .tensors()
        .iter()
        .map(|(_, t)| t.iter().map(|&g| (g as f64) * (g as f64)).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

fn scale_grads(grads: &mut crate::net::ModelGrads<f32>, factor: f32) {
    grads.embedding *= factor;
    grads.lstm_fwd.w *= factor;
    grads.lstm_fwd.v *= factor;
    grads.lstm_fwd.b *= factor;
    grads.lstm_bwd.w *= factor;
    grads.lstm_bwd.v *= factor;
    grads.lstm_bwd.b *= factor;
    grads.bn_gamma *= factor;
    grads.bn_beta *= factor;
    grads.head_weight *= factor;
    grads.head_bias[()] *= factor;
}

/// Run the full schedule. Deterministic given (model, config, rng, data):
/// per-epoch order comes from one seeded shuffle stream, the final partial
/// batch is kept only when it has at least 2 examples (batch-norm validity),
/// and a non-finite loss aborts with its epoch and step.
pub fn train(
    train_set: &[Example],
    dev_set: Option<&[Example]>,
    mut model: ModelState<f32>,
    config: &TrainConfig,
    mut rng: ChaCha8Rng,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    for ex in train_set.iter().chain(dev_set.unwrap_or(&[])) {
        if ex.target.is_none() {
            return Err(Error::Format(format!(
                "example {} has no grade; training and dev sets must be labeled",
                ex.id
            )));
        }
    }

    let mut opt = RmspropState::zeros_like(&model);
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, ModelState<f32>)> = None;
    let lr = config.learning_rate as f32;
    let rho = config.rho as f32;
    let eps = config.eps as f32;

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..config.epochs {
        if config.shuffle {
            order.shuffle(&mut rng);
        }
        let mut sq_err_sum = 0.0f64;
        let mut seen = 0usize;
        for (step, chunk) in order.chunks(config.batch_size).enumerate() {
            if chunk.len() < 2 {
                // A lone trailing example cannot be batch-normalized; with
                // shuffling on it rejoins a batch next epoch.
                continue;
            }
            let batch: Vec<Example> = chunk.iter().map(|&i| train_set[i].clone()).collect();
            let targets = batch_targets(&batch);
            let fwd = model_forward(&batch, &model, Mode::Train)?;
            let (loss, dpreds) = mse_loss(&fwd.preds, &targets)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, step });
            }
            sq_err_sum += loss as f64 * batch.len() as f64;
            seen += batch.len();

            let cache = fwd.cache.expect("train mode builds a cache");
            let mut grads = model_backward(&dpreds, &cache, &model);
            if let Some(cap) = config.clip_norm {
                let norm = global_norm(&grads);
                if norm > cap {
                    scale_grads(&mut grads, (cap / norm) as f32);
                }
            }
            rmsprop_step(&mut model, &grads, &mut opt, lr, rho, eps)?;
            update_running(&mut model.bn, &fwd.bn_stats.expect("train mode"));
        }
        if seen == 0 {
            return Err(Error::Config(format!(
                "no trainable batch: {} examples with batch_size {}",
                train_set.len(),
                config.batch_size
            )));
        }

        let stats = EpochStats {
            epoch,
            train_mse: sq_err_sum / seen as f64,
            dev_rmse: match dev_set {
                Some(dev) if !dev.is_empty() => Some(dev_rmse(dev, &model, config)?),
                _ => None,
            },
        };
        if let Some(r) = stats.dev_rmse {
            let improved = best.as_ref().map_or(true, |(best_r, _, _)| r < *best_r);
            if improved {
                best = Some((r, epoch, model.clone()));
            }
        }
        on_epoch(&stats);
        history.push(stats);
    }

    let (best_model, best_epoch) = match best {
        Some((_, epoch, state)) => (state, epoch),
        // No dev set (or zero epochs): the final state is the best we know.
        None => (model.clone(), config.epochs.saturating_sub(1)),
    };
    Ok(TrainOutcome {
        model,
        best_model,
        best_epoch,
        opt,
        history,
        rng,
    })
}
