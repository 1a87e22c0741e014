//! Single-neuron prediction head: ŷ = s·w + b, optionally ReLU-rectified.
//! The regression loss always sees the raw output; any [0, 3] clamping
//! happens in prediction and evaluation paths only.

use ndarray::{arr0, Array0, Array1, Array2, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::net::xavier_fill;
use crate::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams<F: Scalar> {
    pub weight: Array1<F>,
    pub bias: Array0<F>,
}

impl<F: Scalar> HeadParams<F> {
    pub fn new(features: usize, rng: &mut impl Rng) -> HeadParams<F> {
        let mut weight = Array1::zeros(features);
        xavier_fill(&mut weight, features, 1, rng);
        HeadParams {
            weight,
            bias: arr0(F::zero()),
        }
    }

    pub fn features(&self) -> usize {
        self.weight.len()
    }
}

#[derive(Debug, Clone)]
pub struct HeadCache<F: Scalar> {
    pub s: Array2<F>,
    pub pre: Array1<F>,
    pub relu: bool,
}

pub fn head_forward<F: Scalar>(
    s: &Array2<F>,
    p: &HeadParams<F>,
    relu: bool,
) -> Result<(Array1<F>, HeadCache<F>)> {
    if s.ncols() != p.features() {
        return Err(Error::ShapeMismatch {
            op: "head_forward",
            detail: format!("{} features, head expects {}", s.ncols(), p.features()),
        });
    }
    let pre = s.dot(&p.weight) + p.bias[()];
    let preds = if relu {
        pre.mapv(|v| v.max(F::zero()))
    } else {
        pre.clone()
    };
    Ok((
        preds,
        HeadCache {
            s: s.clone(),
            pre,
            relu,
        },
    ))
}

/// Gradients for (input summary, weight, bias) given dL/dŷ.
pub fn head_backward<F: Scalar>(
    dy: &Array1<F>,
    cache: &HeadCache<F>,
    p: &HeadParams<F>,
) -> (Array2<F>, Array1<F>, Array0<F>) {
    let dpre = if cache.relu {
        let mask = cache.pre.mapv(|v| if v > F::zero() { F::one() } else { F::zero() });
        dy * &mask
    } else {
        dy.clone()
    };
    let dweight = cache.s.t().dot(&dpre);
    let dbias = arr0(dpre.sum());
    let ds = dpre
        .view()
        .insert_axis(Axis(1))
        .dot(&p.weight.view().insert_axis(Axis(0)));
    (ds, dweight, dbias)
}
