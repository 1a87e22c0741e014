//! Regression engine for grading the funniness of micro-edited news
//! headlines: trainable word embeddings feed a bidirectional LSTM, the
//! sequence summary is batch-normalized, and a linear head predicts the mean
//! grade on a 0 to 3 scale. Includes the training loop, checkpointing, and
//! the task metrics (RMSE, RMSE@k, pairwise accuracy and reward).

pub mod corpus;
pub mod embed;
pub mod error;
pub mod eval;
pub mod net;
pub mod pipeline;
pub mod text;
pub mod train;

pub use error::{Error, Result};

use ndarray::NdFloat;
use num_traits::FromPrimitive;
use rand::distr::uniform::SampleUniform;

/// Element type for all tensors. Training runs in `f32`; gradient checks use
/// `f64` so finite differences stay above roundoff.
pub trait Scalar: NdFloat + FromPrimitive + SampleUniform {
    fn from_f(v: f64) -> Self;
    fn to_f(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn from_f(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_f(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_f(self) -> f64 {
        self
    }
}
