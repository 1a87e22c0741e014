//! Mean squared error with its gradient.

use ndarray::Array1;

use crate::error::{Error, Result};
use crate::Scalar;

/// MSE = (1/n)·Σ(y − ŷ)², gradient w.r.t. predictions = 2(ŷ − y)/n.
pub fn mse_loss<F: Scalar>(pred: &Array1<F>, target: &Array1<F>) -> Result<(F, Array1<F>)> {
    if pred.len() != target.len() {
        return Err(Error::ShapeMismatch {
            op: "mse_loss",
            detail: format!("{} predictions vs {} targets", pred.len(), target.len()),
        });
    }
    let n = pred.len();
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    let inv_n = F::from_f(1.0 / n as f64);
    let diff = pred - target;
    let loss = diff.mapv(|d| d * d).sum() * inv_n;
    let two = F::from_f(2.0);
    let grad = diff.mapv(|d| two * d * inv_n);
    Ok((loss, grad))
}
