//! End-to-end gradient verification: analytic backprop against central
//! finite differences, in 64-bit, on a small model. Run it whenever the
//! backward path changes; a broken derivative shows up as a named tensor.

use ndarray::Array1;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::loss::mse_loss;
use crate::corpus::Example;
use crate::embed::EmbeddingTable;
use crate::error::{Error, Result};
use crate::net::{
    model_backward, model_forward, Mode, ModelConfig, ModelState, SummaryMode, TENSOR_NAMES,
};

/// Central-difference step. In 64-bit this balances truncation against
/// round-off at roughly 1e-10 absolute error.
const FD_STEP: f64 = 1e-5;
/// Relative error bound for a coordinate to pass.
const REL_TOL: f64 = 1e-4;
/// Differences below this are indistinguishable from round-off; such
/// coordinates pass outright (covers genuinely zero gradients).
const ABS_FLOOR: f64 = 1e-9;
/// Coordinates sampled per tensor (every coordinate when a tensor is
/// smaller than this).
const COORDS_PER_TENSOR: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: &'static str,
    /// Coordinates compared.
    pub checked: usize,
    pub max_rel_err: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub tensors: Vec<TensorCheck>,
    pub pass: bool,
}

impl GradcheckReport {
    /// One line per tensor, then a verdict — ready for terminal output.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for t in &self.tensors {
            out.push_str(&format!(
                "{:<22} {:>4} coords  max rel err {:.3e}  {}\n",
                t.name,
                t.checked,
                t.max_rel_err,
                if t.pass { "ok" } else { "FAIL" }
            ));
        }
        out.push_str(if self.pass {
            "gradient check passed\n"
        } else {
            "gradient check FAILED\n"
        });
        out
    }
}

fn coord_get(model: &mut ModelState<f64>, tensor: usize, idx: usize) -> f64 {
    *model.tensors_mut()[tensor].1.iter_mut().nth(idx).unwrap()
}

fn coord_set(model: &mut ModelState<f64>, tensor: usize, idx: usize, v: f64) {
    *model.tensors_mut()[tensor].1.iter_mut().nth(idx).unwrap() = v;
}

fn batch_loss(model: &ModelState<f64>, examples: &[Example], targets: &Array1<f64>) -> Result<f64> {
    let fwd = model_forward(examples, model, Mode::Train)?;
    let (loss, _) = mse_loss(&fwd.preds, targets)?;
    Ok(loss)
}

/// Compare analytic gradients of the training loss against central finite
/// differences on `model`, sampling coordinates with `rng`. `negate_tensor`
/// optionally flips the sign of one tensor's analytic gradient before the
/// comparison — a self-test that the check can actually catch a wrong
/// derivative. The model is perturbed in place but restored exactly.
pub fn check_model_gradients(
    model: &mut ModelState<f64>,
    examples: &[Example],
    rng: &mut ChaCha8Rng,
    negate_tensor: Option<&str>,
) -> Result<GradcheckReport> {
    if let Some(name) = negate_tensor {
        if !TENSOR_NAMES.contains(&name) {
            return Err(Error::Config(format!(
                "unknown tensor {name:?}; expected one of {TENSOR_NAMES:?}"
            )));
        }
    }
    let targets = Array1::from_iter(examples.iter().map(|ex| {
        ex.target.expect("gradient-check examples carry targets")
    }));

    let fwd = model_forward(examples, model, Mode::Train)?;
    let (_, dpreds) = mse_loss(&fwd.preds, &targets)?;
    let cache = fwd.cache.expect("train mode builds a cache");
    let mut grads = model_backward(&dpreds, &cache, model);
    if let Some(name) = negate_tensor {
        for (gname, mut view) in grads.tensors_mut() {
            if gname == name {
                view.mapv_inplace(|g| -g);
            }
        }
    }

    let analytic: Vec<Vec<f64>> = grads
        .tensors()
        .into_iter()
        .map(|(_, t)| t.iter().copied().collect())
        .collect();

    let mut tensors = Vec::with_capacity(TENSOR_NAMES.len());
    for (k, &name) in TENSOR_NAMES.iter().enumerate() {
        let len = analytic[k].len();
        let coords: Vec<usize> = if len <= COORDS_PER_TENSOR {
            (0..len).collect()
        } else {
            rand::seq::index::sample(rng, len, COORDS_PER_TENSOR).into_vec()
        };
        let mut max_rel_err = 0.0f64;
        let mut pass = true;
        for &idx in &coords {
            let orig = coord_get(model, k, idx);
            coord_set(model, k, idx, orig + FD_STEP);
            let up = batch_loss(model, examples, &targets)?;
            coord_set(model, k, idx, orig - FD_STEP);
            let down = batch_loss(model, examples, &targets)?;
            coord_set(model, k, idx, orig);
            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = analytic[k][idx];
            let diff = (a - numeric).abs();
            if diff > ABS_FLOOR {
                let rel = diff / a.abs().max(numeric.abs());
                max_rel_err = max_rel_err.max(rel);
                if rel > REL_TOL {
                    pass = false;
                }
            }
        }
        tensors.push(TensorCheck {
            name,
            checked: coords.len(),
            max_rel_err,
            pass,
        });
    }
    let pass = tensors.iter().all(|t| t.pass);
    Ok(GradcheckReport { tensors, pass })
}

/// The small fixed model and batch the standalone check runs on: 9 tokens,
/// 5-dim embeddings, hidden 3, window 4, with padding in play so both scan
/// directions and the summary selection are exercised.
fn toy_problem(seed: u64) -> (ModelState<f64>, Vec<Example>, ChaCha8Rng) {
    let config = ModelConfig {
        seq_len: 4,
        dim: 5,
        hidden: 3,
        summary: SummaryMode::LastFirst,
        relu_head: false,
        bn_epsilon: 1e-3,
        bn_momentum: 0.99,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let embedding = EmbeddingTable::random(9, config.dim, &mut rng);
    let model = ModelState::init(config, embedding, &mut rng).expect("toy dims agree");
    let mk = |id: &str, tokens: Vec<usize>, len: usize, target: f64| Example {
        id: id.to_string(),
        tokens,
        true_length: len,
        target: Some(target),
    };
    // Every non-reserved token id appears, so a negated embedding gradient
    // cannot hide in unused rows.
    let examples = vec![
        mk("g0", vec![2, 3, 4, 5], 4, 0.7),
        mk("g1", vec![6, 7, 0, 0], 2, 1.9),
        mk("g2", vec![8, 2, 6, 0], 3, 2.4),
        mk("g3", vec![3, 5, 0, 0], 2, 0.2),
    ];
    (model, examples, rng)
}

/// Run the standard check on a freshly initialized small model.
pub fn gradcheck(seed: u64) -> Result<GradcheckReport> {
    gradcheck_with_fault(seed, None)
}

/// Same, with an optional deliberately wrong (sign-flipped) tensor.
pub fn gradcheck_with_fault(seed: u64, negate_tensor: Option<&str>) -> Result<GradcheckReport> {
    let (mut model, examples, mut rng) = toy_problem(seed);
    check_model_gradients(&mut model, &examples, &mut rng, negate_tensor)
}
