//! Task metrics: RMSE and RMSE@k for grade regression, pairwise accuracy
//! and reward for the funnier-of-two task.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::corpus::PairRecord;
use crate::error::{Error, Result};

/// Which value ranks examples for the RMSE@k selection. The official task
/// definition is ambiguous; ground truth is the default and reports say so.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RankBasis {
    Truth,
    Prediction,
}

impl RankBasis {
    pub fn as_str(self) -> &'static str {
        match self {
            RankBasis::Truth => "truth",
            RankBasis::Prediction => "prediction",
        }
    }
}

/// sqrt(mean((pred − truth)²)).
pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::ShapeMismatch {
            op: "rmse",
            detail: format!("{} predictions vs {} truths", pred.len(), truth.len()),
        });
    }
    if pred.is_empty() {
        return Err(Error::EmptyInput);
    }
    let sum: f64 = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok((sum / pred.len() as f64).sqrt())
}

/// RMSE over the ceil(k·n/100) examples ranked highest by `basis`, ties
/// broken stably by input order. k is a percentage in 1..=100.
pub fn rmse_at_k_by(pred: &[f64], truth: &[f64], k: usize, basis: RankBasis) -> Result<f64> {
    if !(1..=100).contains(&k) {
        return Err(Error::Config(format!("k must be in 1..=100, got {k}")));
    }
    if pred.len() != truth.len() {
        return Err(Error::ShapeMismatch {
            op: "rmse_at_k",
            detail: format!("{} predictions vs {} truths", pred.len(), truth.len()),
        });
    }
    let n = pred.len();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    let take = (k * n).div_ceil(100);
    let ranked = match basis {
        RankBasis::Truth => truth,
        RankBasis::Prediction => pred,
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| ranked[b].partial_cmp(&ranked[a]).expect("finite metric input"));
    let selected: Vec<usize> = order.into_iter().take(take).collect();
    let pred_sel: Vec<f64> = selected.iter().map(|&i| pred[i]).collect();
    let truth_sel: Vec<f64> = selected.iter().map(|&i| truth[i]).collect();
    rmse(&pred_sel, &truth_sel)
}

/// RMSE@k with the default ground-truth ranking.
pub fn rmse_at_k(pred: &[f64], truth: &[f64], k: usize) -> Result<f64> {
    rmse_at_k_by(pred, truth, k, RankBasis::Truth)
}

/// Which side of a pair is predicted funnier: 1, 2, or 1 on an exact tie
/// (the deterministic tie rule).
pub fn compare_pair(pred_a: f64, pred_b: f64) -> u8 {
    if pred_b > pred_a {
        2
    } else {
        1
    }
}

/// Clamp a grade prediction onto the valid [0, 3] scale. Inference and
/// evaluation only; the training loss sees raw outputs.
pub fn clamp_grade(v: f64) -> f64 {
    v.clamp(0.0, 3.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Task2Metrics {
    pub accuracy: f64,
    pub reward: f64,
    /// Pairs the metrics were computed over (ties excluded).
    pub n_pairs: usize,
    pub n_ties_excluded: usize,
}

/// Accuracy and reward from raw parts: per-pair truth label, truth grade
/// difference (side a minus side b), and the two predictions. Label-0
/// (equally funny) pairs are excluded but counted.
pub fn task2_metrics_from_labels(
    labels: &[u8],
    deltas: &[f64],
    preds: &[(f64, f64)],
) -> Result<Task2Metrics> {
    if labels.len() != deltas.len() || labels.len() != preds.len() {
        return Err(Error::ShapeMismatch {
            op: "task2_metrics",
            detail: format!(
                "{} labels, {} deltas, {} prediction pairs",
                labels.len(),
                deltas.len(),
                preds.len()
            ),
        });
    }
    let pred_labels: Vec<u8> = preds.iter().map(|&(pa, pb)| compare_pair(pa, pb)).collect();
    score_labels(labels, deltas, &pred_labels)
}

/// Same metrics when the predictions arrive as already-decided labels
/// instead of grade pairs (the format the pair-prediction file carries).
pub fn task2_metrics_from_predicted_labels(
    pairs: &[PairRecord],
    pred_labels: &[u8],
) -> Result<Task2Metrics> {
    let (labels, deltas) = gold_parts(pairs, pred_labels.len())?;
    score_labels(&labels, &deltas, pred_labels)
}

/// Metrics from fully-decided parts: truth labels, truth grade differences
/// (side a minus side b), and predicted labels.
pub fn score_labels(labels: &[u8], deltas: &[f64], pred_labels: &[u8]) -> Result<Task2Metrics> {
    if labels.len() != deltas.len() || labels.len() != pred_labels.len() {
        return Err(Error::ShapeMismatch {
            op: "score_labels",
            detail: format!(
                "{} labels, {} deltas, {} predicted labels",
                labels.len(),
                deltas.len(),
                pred_labels.len()
            ),
        });
    }
    let mut included = 0usize;
    let mut ties = 0usize;
    let mut correct = 0usize;
    let mut reward_sum = 0.0;
    for ((&label, &delta), &pred) in labels.iter().zip(deltas).zip(pred_labels) {
        if label == 0 {
            ties += 1;
            continue;
        }
        included += 1;
        if pred == label {
            correct += 1;
            reward_sum += delta.abs();
        } else {
            reward_sum -= delta.abs();
        }
    }
    if included == 0 {
        return Err(Error::NoLabeledPairs);
    }
    Ok(Task2Metrics {
        accuracy: correct as f64 / included as f64,
        reward: reward_sum / included as f64,
        n_pairs: included,
        n_ties_excluded: ties,
    })
}

/// Pull (label, grade delta) out of fully annotated pair records, checking
/// the prediction count against the record count.
fn gold_parts(pairs: &[PairRecord], n_preds: usize) -> Result<(Vec<u8>, Vec<f64>)> {
    if pairs.len() != n_preds {
        return Err(Error::ShapeMismatch {
            op: "task2_metrics",
            detail: format!("{} pairs vs {} predictions", pairs.len(), n_preds),
        });
    }
    let mut labels = Vec::with_capacity(pairs.len());
    let mut deltas = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let label = pair
            .label
            .ok_or_else(|| Error::Format(format!("pair {} has no label", pair.id)))?;
        let ga = pair
            .record_a
            .mean_grade
            .ok_or_else(|| Error::Format(format!("pair {} side 1 has no meanGrade", pair.id)))?;
        let gb = pair
            .record_b
            .mean_grade
            .ok_or_else(|| Error::Format(format!("pair {} side 2 has no meanGrade", pair.id)))?;
        labels.push(label);
        deltas.push(ga - gb);
    }
    Ok((labels, deltas))
}

/// [`task2_metrics_from_labels`] over pair records. Every record must carry
/// a label and grades on both sides.
pub fn task2_metrics(pairs: &[PairRecord], preds: &[(f64, f64)]) -> Result<Task2Metrics> {
    let (labels, deltas) = gold_parts(pairs, preds.len())?;
    task2_metrics_from_labels(&labels, &deltas, preds)
}

/// The JSON evaluation report. Grade-regression fields are present for
/// Task-1 runs, `task2` for pair runs; absent sections are omitted.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rmse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rmse_at: Option<BTreeMap<String, f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rmse_at_basis: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_examples: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub task2: Option<Task2Metrics>,
}

impl MetricsReport {
    /// Task-1 report: RMSE plus RMSE@{10,20,30} under `basis` ranking.
    pub fn task1(pred: &[f64], truth: &[f64], basis: RankBasis) -> Result<MetricsReport> {
        let mut rmse_at = BTreeMap::new();
        for k in [10usize, 20, 30] {
            rmse_at.insert(k.to_string(), rmse_at_k_by(pred, truth, k, basis)?);
        }
        Ok(MetricsReport {
            rmse: Some(rmse(pred, truth)?),
            rmse_at: Some(rmse_at),
            rmse_at_basis: Some(basis.as_str().to_string()),
            n_examples: Some(pred.len()),
            task2: None,
        })
    }

    pub fn task2(pairs: &[PairRecord], preds: &[(f64, f64)]) -> Result<MetricsReport> {
        Ok(MetricsReport::from_task2(task2_metrics(pairs, preds)?))
    }

    pub fn from_task2(metrics: Task2Metrics) -> MetricsReport {
        MetricsReport {
            rmse: None,
            rmse_at: None,
            rmse_at_basis: None,
            n_examples: None,
            task2: Some(metrics),
        }
    }
}
