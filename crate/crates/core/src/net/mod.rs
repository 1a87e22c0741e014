//! The model: embedding lookup → BiLSTM → batch norm → linear head, with
//! full reverse-mode gradients for every parameter tensor.

pub mod batchnorm;
pub mod head;
pub mod lstm;

pub use batchnorm::{
    batchnorm_backward, batchnorm_forward, batchnorm_infer, batchnorm_train, update_running,
    BatchNormParams, BnCache, BnStats,
};
pub use head::{head_backward, head_forward, HeadCache, HeadParams};
pub use lstm::{
    bilstm_backward, bilstm_forward, lstm_cell_forward, scan_backward, scan_forward, BiLstmCache,
    BiLstmGrads, BiLstmParams, DirectionGrads, LstmDirectionParams, ScanCache, StepCache,
    SummaryMode,
};

use ndarray::{s, Array0, Array1, Array2, ArrayViewD, ArrayViewMutD, Dimension};
use rand::Rng;

use crate::corpus::Example;
use crate::embed::{lookup_batch, EmbeddingTable};
use crate::error::{Error, Result};
use crate::Scalar;

/// Whether batch norm uses batch statistics (and the caller records them)
/// or the frozen running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

pub(crate) fn sigmoid<F: Scalar>(v: F) -> F {
    F::one() / (F::one() + (-v).exp())
}

/// Uniform Xavier/Glorot fill in ±sqrt(6/(fan_in+fan_out)), drawn in the
/// array's logical order so a given seed always produces the same tensor.
pub(crate) fn xavier_fill<F: Scalar, D: Dimension>(
    a: &mut ndarray::Array<F, D>,
    fan_in: usize,
    fan_out: usize,
    rng: &mut impl Rng,
) {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for v in a.iter_mut() {
        *v = F::from_f(rng.random_range(-bound..=bound));
    }
}

/// Architecture hyperparameters. `dim` must match the embedding table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    /// Fixed window length L; shorter headlines are padded, longer truncated.
    pub seq_len: usize,
    /// Embedding width D.
    pub dim: usize,
    /// Hidden size H per direction; the summary is 2H wide.
    pub hidden: usize,
    pub summary: SummaryMode,
    /// Rectify the head output (off: pure linear regression head).
    pub relu_head: bool,
    pub bn_epsilon: f64,
    pub bn_momentum: f64,
}

impl Default for ModelConfig {
    fn default() -> ModelConfig {
        ModelConfig {
            seq_len: 20,
            dim: 300,
            hidden: 128,
            summary: SummaryMode::LastFirst,
            relu_head: false,
            bn_epsilon: 1e-3,
            bn_momentum: 0.99,
        }
    }
}

/// Every trainable tensor plus batch-norm running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState<F: Scalar> {
    pub config: ModelConfig,
    pub embedding: EmbeddingTable<F>,
    pub bilstm: BiLstmParams<F>,
    pub bn: BatchNormParams<F>,
    pub head: HeadParams<F>,
}

/// Canonical tensor order used by the optimizer, checkpoints, and gradient
/// checks. Keep in sync with `ModelState::tensors`.
pub const TENSOR_NAMES: [&str; 11] = [
    "param.embedding",
    "param.lstm_fwd.w",
    "param.lstm_fwd.v",
    "param.lstm_fwd.b",
    "param.lstm_bwd.w",
    "param.lstm_bwd.v",
    "param.lstm_bwd.b",
    "param.bn.gamma",
    "param.bn.beta",
    "param.head.weight",
    "param.head.bias",
];

impl<F: Scalar> ModelState<F> {
    /// Fresh state around an existing embedding table. Draw order is fixed:
    /// fwd W, fwd V, bwd W, bwd V, head weight.
    pub fn init(
        config: ModelConfig,
        embedding: EmbeddingTable<F>,
        rng: &mut impl Rng,
    ) -> Result<ModelState<F>> {
        if embedding.dim() != config.dim {
            return Err(Error::DimMismatch {
                what: "embedding table",
                expected: config.dim,
                found: embedding.dim(),
            });
        }
        let bilstm = BiLstmParams::new(config.dim, config.hidden, rng);
        let bn = BatchNormParams::new(2 * config.hidden, config.bn_epsilon, config.bn_momentum);
        let head = HeadParams::new(2 * config.hidden, rng);
        Ok(ModelState {
            config,
            embedding,
            bilstm,
            bn,
            head,
        })
    }

    /// Trainable tensors in canonical order, names matching [`TENSOR_NAMES`].
    pub fn tensors(&self) -> Vec<(&'static str, ArrayViewD<'_, F>)> {
        vec![
            ("param.embedding", self.embedding.weights.view().into_dyn()),
            ("param.lstm_fwd.w", self.bilstm.fwd.w.view().into_dyn()),
            ("param.lstm_fwd.v", self.bilstm.fwd.v.view().into_dyn()),
            ("param.lstm_fwd.b", self.bilstm.fwd.b.view().into_dyn()),
            ("param.lstm_bwd.w", self.bilstm.bwd.w.view().into_dyn()),
            ("param.lstm_bwd.v", self.bilstm.bwd.v.view().into_dyn()),
            ("param.lstm_bwd.b", self.bilstm.bwd.b.view().into_dyn()),
            ("param.bn.gamma", self.bn.gamma.view().into_dyn()),
            ("param.bn.beta", self.bn.beta.view().into_dyn()),
            ("param.head.weight", self.head.weight.view().into_dyn()),
            ("param.head.bias", self.head.bias.view().into_dyn()),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, ArrayViewMutD<'_, F>)> {
        vec![
            (
                "param.embedding",
                self.embedding.weights.view_mut().into_dyn(),
            ),
            ("param.lstm_fwd.w", self.bilstm.fwd.w.view_mut().into_dyn()),
            ("param.lstm_fwd.v", self.bilstm.fwd.v.view_mut().into_dyn()),
            ("param.lstm_fwd.b", self.bilstm.fwd.b.view_mut().into_dyn()),
            ("param.lstm_bwd.w", self.bilstm.bwd.w.view_mut().into_dyn()),
            ("param.lstm_bwd.v", self.bilstm.bwd.v.view_mut().into_dyn()),
            ("param.lstm_bwd.b", self.bilstm.bwd.b.view_mut().into_dyn()),
            ("param.bn.gamma", self.bn.gamma.view_mut().into_dyn()),
            ("param.bn.beta", self.bn.beta.view_mut().into_dyn()),
            ("param.head.weight", self.head.weight.view_mut().into_dyn()),
            ("param.head.bias", self.head.bias.view_mut().into_dyn()),
        ]
    }
}

/// Gradients for every entry of [`ModelState::tensors`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads<F: Scalar> {
    pub embedding: Array2<F>,
    pub lstm_fwd: DirectionGrads<F>,
    pub lstm_bwd: DirectionGrads<F>,
    pub bn_gamma: Array1<F>,
    pub bn_beta: Array1<F>,
    pub head_weight: Array1<F>,
    pub head_bias: Array0<F>,
}

impl<F: Scalar> ModelGrads<F> {
    pub fn zeros_like(state: &ModelState<F>) -> ModelGrads<F> {
        let d = state.config.dim;
        let h = state.config.hidden;
        ModelGrads {
            embedding: Array2::zeros((state.embedding.vocab_size(), d)),
            lstm_fwd: DirectionGrads::zeros(d, h),
            lstm_bwd: DirectionGrads::zeros(d, h),
            bn_gamma: Array1::zeros(2 * h),
            bn_beta: Array1::zeros(2 * h),
            head_weight: Array1::zeros(2 * h),
            head_bias: ndarray::arr0(F::zero()),
        }
    }

    pub fn tensors(&self) -> Vec<(&'static str, ArrayViewD<'_, F>)> {
        vec![
            ("param.embedding", self.embedding.view().into_dyn()),
            ("param.lstm_fwd.w", self.lstm_fwd.w.view().into_dyn()),
            ("param.lstm_fwd.v", self.lstm_fwd.v.view().into_dyn()),
            ("param.lstm_fwd.b", self.lstm_fwd.b.view().into_dyn()),
            ("param.lstm_bwd.w", self.lstm_bwd.w.view().into_dyn()),
            ("param.lstm_bwd.v", self.lstm_bwd.v.view().into_dyn()),
            ("param.lstm_bwd.b", self.lstm_bwd.b.view().into_dyn()),
            ("param.bn.gamma", self.bn_gamma.view().into_dyn()),
            ("param.bn.beta", self.bn_beta.view().into_dyn()),
            ("param.head.weight", self.head_weight.view().into_dyn()),
            ("param.head.bias", self.head_bias.view().into_dyn()),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, ArrayViewMutD<'_, F>)> {
        vec![
            ("param.embedding", self.embedding.view_mut().into_dyn()),
            ("param.lstm_fwd.w", self.lstm_fwd.w.view_mut().into_dyn()),
            ("param.lstm_fwd.v", self.lstm_fwd.v.view_mut().into_dyn()),
            ("param.lstm_fwd.b", self.lstm_fwd.b.view_mut().into_dyn()),
            ("param.lstm_bwd.w", self.lstm_bwd.w.view_mut().into_dyn()),
            ("param.lstm_bwd.v", self.lstm_bwd.v.view_mut().into_dyn()),
            ("param.lstm_bwd.b", self.lstm_bwd.b.view_mut().into_dyn()),
            ("param.bn.gamma", self.bn_gamma.view_mut().into_dyn()),
            ("param.bn.beta", self.bn_beta.view_mut().into_dyn()),
            ("param.head.weight", self.head_weight.view_mut().into_dyn()),
            ("param.head.bias", self.head_bias.view_mut().into_dyn()),
        ]
    }
}

/// Everything backward needs from one forward pass.
#[derive(Debug, Clone)]
pub struct ModelCache<F: Scalar> {
    pub ids: Vec<Vec<usize>>,
    pub bilstm: BiLstmCache<F>,
    pub bn: BnCache<F>,
    pub head: HeadCache<F>,
}

pub struct Forward<F: Scalar> {
    pub preds: Array1<F>,
    /// Present in train mode only.
    pub cache: Option<ModelCache<F>>,
    /// Batch statistics from train mode; the training loop folds them into
    /// the running stats after the step.
    pub bn_stats: Option<BnStats<F>>,
}

/// Full pipeline over one batch of padded examples.
pub fn model_forward<F: Scalar>(
    examples: &[Example],
    state: &ModelState<F>,
    mode: Mode,
) -> Result<Forward<F>> {
    if examples.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let seq_len = state.config.seq_len;
    let vocab_size = state.embedding.vocab_size();
    let mut ids = Vec::with_capacity(examples.len());
    let mut lengths = Vec::with_capacity(examples.len());
    for ex in examples {
        if ex.tokens.len() != seq_len {
            return Err(Error::ShapeMismatch {
                op: "model_forward",
                detail: format!(
                    "example {} has {} tokens, window is {seq_len}",
                    ex.id,
                    ex.tokens.len()
                ),
            });
        }
        if let Some(&bad) = ex.tokens.iter().find(|&&t| t >= vocab_size) {
            return Err(Error::ShapeMismatch {
                op: "model_forward",
                detail: format!("token id {bad} outside vocabulary of {vocab_size}"),
            });
        }
        ids.push(ex.tokens.clone());
        lengths.push(ex.true_length.min(seq_len));
    }

    let x = lookup_batch(&state.embedding, &ids);
    let (summary, bilstm_cache) =
        bilstm_forward(&x, &lengths, &state.bilstm, state.config.summary)?;
    match mode {
        Mode::Train => {
            let (bn_out, bn_cache, bn_stats) = batchnorm_train(&summary, &state.bn)?;
            let (preds, head_cache) = head_forward(&bn_out, &state.head, state.config.relu_head)?;
            Ok(Forward {
                preds,
                cache: Some(ModelCache {
                    ids,
                    bilstm: bilstm_cache,
                    bn: bn_cache,
                    head: head_cache,
                }),
                bn_stats: Some(bn_stats),
            })
        }
        Mode::Infer => {
            let bn_out = batchnorm_infer(&summary, &state.bn)?;
            let (preds, _) = head_forward(&bn_out, &state.head, state.config.relu_head)?;
            Ok(Forward {
                preds,
                cache: None,
                bn_stats: None,
            })
        }
    }
}

/// Reverse the full pipeline. `dpreds` is dL/dŷ per example.
pub fn model_backward<F: Scalar>(
    dpreds: &Array1<F>,
    cache: &ModelCache<F>,
    state: &ModelState<F>,
) -> ModelGrads<F> {
    let (d_bn_out, head_weight, head_bias) = head_backward(dpreds, &cache.head, &state.head);
    let (d_summary, bn_gamma, bn_beta) = batchnorm_backward(&d_bn_out, &cache.bn, &state.bn);
    let (dx, bilstm_grads) = bilstm_backward(&d_summary, &cache.bilstm, &state.bilstm);

    let mut embedding = Array2::zeros(state.embedding.weights.dim());
    for (b, row_ids) in cache.ids.iter().enumerate() {
        for (t, &id) in row_ids.iter().enumerate() {
            let mut row = embedding.row_mut(id);
            row += &dx.slice(s![b, t, ..]);
        }
    }

    ModelGrads {
        embedding,
        lstm_fwd: bilstm_grads.fwd,
        lstm_bwd: bilstm_grads.bwd,
        bn_gamma,
        bn_beta,
        head_weight,
        head_bias,
    }
}
