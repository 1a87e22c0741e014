//! RMSprop: per-coordinate learning rates from an exponential moving
//! average of squared gradients.

use ndarray::{ArrayD, ArrayViewD, ArrayViewMutD, Zip};

use crate::error::{Error, Result};
use crate::net::{ModelGrads, ModelState};
use crate::Scalar;

/// One squared-gradient accumulator per parameter tensor, in canonical
/// tensor order. Entries are nonnegative by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct RmspropState<F: Scalar> {
    pub acc: Vec<ArrayD<F>>,
}

impl<F: Scalar> RmspropState<F> {
    pub fn zeros_like(model: &ModelState<F>) -> RmspropState<F> {
        RmspropState {
            acc: model
                .tensors()
                .into_iter()
                .map(|(_, t)| ArrayD::zeros(t.raw_dim()))
                .collect(),
        }
    }
}

fn update<F: Scalar>(
    mut p: ArrayViewMutD<F>,
    g: ArrayViewD<F>,
    mut s: ArrayViewMutD<F>,
    lr: F,
    rho: F,
    eps: F,
) {
    let one = F::one();
    Zip::from(&mut p).and(&g).and(&mut s).for_each(|p, &g, s| {
        *s = rho * *s + (one - rho) * g * g;
        *p = *p - lr * g / (s.sqrt() + eps);
    });
}

/// s ← rho·s + (1−rho)·g²; p ← p − lr·g/(√s + eps). Frozen embedding rows
/// (PAD) are skipped entirely: neither the row nor its accumulator moves.
pub fn rmsprop_step<F: Scalar>(
    model: &mut ModelState<F>,
    grads: &ModelGrads<F>,
    opt: &mut RmspropState<F>,
    lr: F,
    rho: F,
    eps: F,
) -> Result<()> {
    {
        let g_tensors = grads.tensors();
        let p_tensors = model.tensors();
        if opt.acc.len() != p_tensors.len() {
            return Err(Error::ShapeMismatch {
                op: "rmsprop_step",
                detail: format!(
                    "{} accumulators for {} tensors",
                    opt.acc.len(),
                    p_tensors.len()
                ),
            });
        }
        for (k, (name, p)) in p_tensors.iter().enumerate() {
            if g_tensors[k].1.shape() != p.shape() || opt.acc[k].shape() != p.shape() {
                return Err(Error::ShapeMismatch {
                    op: "rmsprop_step",
                    detail: format!("tensor {name} shapes disagree"),
                });
            }
        }
    }

    // Embedding first, row by row, honoring the per-row trainable mask.
    {
        let table = &mut model.embedding;
        let g = &grads.embedding;
        let s = opt.acc[0]
            .view_mut()
            .into_dimensionality::<ndarray::Ix2>()
            .expect("embedding accumulator is 2-d");
        let mut s = s;
        for (row, &trainable) in table.row_trainable.clone().iter().enumerate() {
            if !trainable {
                continue;
            }
            update(
                table.weights.row_mut(row).into_dyn(),
                g.row(row).into_dyn(),
                s.row_mut(row).into_dyn(),
                lr,
                rho,
                eps,
            );
        }
    }

    let g_tensors = grads.tensors();
    for (k, (_, p)) in model.tensors_mut().into_iter().enumerate().skip(1) {
        update(p, g_tensors[k].1.view(), opt.acc[k].view_mut(), lr, rho, eps);
    }
    Ok(())
}
