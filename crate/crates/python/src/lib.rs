//! Python bindings for the headline-funniness regression engine.
//!
//! Builds as the extension module `quip_py`. The surface mirrors the Rust
//! crate: corpus loading and the edit grammar, vocabulary handling,
//! checkpointed models with batched prediction, the evaluation metrics,
//! the gradient checker, and file-based training with the same
//! configuration keys as the command-line `train` subcommand.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use quip::corpus::{self, Example, RawRecord};
use quip::eval;
use quip::net::ModelState;
use quip::pipeline::{cmd_train, RunConfig};
use quip::text;
use quip::train::checkpoint::load_checkpoint;
use quip::train::TrainConfig;

fn to_py(e: quip::Error) -> PyErr {
    let msg = e.to_string();
    match e {
        quip::Error::Io { .. } => PyIOError::new_err(msg),
        _ => PyValueError::new_err(msg),
    }
}

// ------------------------------------------------------------------ data --

/// One corpus row: a headline, its replacement word, and (when labeled)
/// the mean funniness grade in [0, 3].
#[pyclass(name = "Record", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyRecord {
    #[pyo3(get)]
    id: String,
    #[pyo3(get)]
    original: String,
    #[pyo3(get)]
    edit: String,
    #[pyo3(get)]
    mean_grade: Option<f64>,
}

impl From<RawRecord> for PyRecord {
    fn from(r: RawRecord) -> PyRecord {
        PyRecord {
            id: r.id,
            original: r.original,
            edit: r.edit,
            mean_grade: r.mean_grade,
        }
    }
}

#[pymethods]
impl PyRecord {
    #[new]
    #[pyo3(signature = (id, original, edit, mean_grade=None))]
    fn new(id: String, original: String, edit: String, mean_grade: Option<f64>) -> PyRecord {
        PyRecord {
            id,
            original,
            edit,
            mean_grade,
        }
    }

    /// The headline with its `<word/>` span replaced by the edit.
    fn edited(&self) -> PyResult<String> {
        corpus::apply_edit(&self.original, &self.edit).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!(
            "Record(id={:?}, original={:?}, edit={:?}, mean_grade={:?})",
            self.id, self.original, self.edit, self.mean_grade
        )
    }
}

/// One pair-task row: two edited versions of the same headline and the
/// label saying which was funnier (1 or 2; 0 marks an equally-funny tie).
#[pyclass(name = "Pair", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyPair {
    #[pyo3(get)]
    id: String,
    #[pyo3(get)]
    a: PyRecord,
    #[pyo3(get)]
    b: PyRecord,
    #[pyo3(get)]
    label: Option<u8>,
}

#[pymethods]
impl PyPair {
    fn __repr__(&self) -> String {
        format!(
            "Pair(id={:?}, edit_a={:?}, edit_b={:?}, label={:?})",
            self.id, self.a.edit, self.b.edit, self.label
        )
    }
}

/// Load a single-headline CSV (`id,original,edit[,meanGrade]`).
#[pyfunction]
fn load_task1_csv(path: PathBuf) -> PyResult<Vec<PyRecord>> {
    let records = corpus::load_task1_csv(&path).map_err(to_py)?;
    Ok(records.into_iter().map(PyRecord::from).collect())
}

/// Load a pair CSV (`id,original1,edit1,…,original2,edit2,…[,label]`).
#[pyfunction]
fn load_task2_csv(path: PathBuf) -> PyResult<Vec<PyPair>> {
    let pairs = corpus::load_task2_csv(&path).map_err(to_py)?;
    Ok(pairs
        .into_iter()
        .map(|p| PyPair {
            id: p.id,
            a: PyRecord::from(p.record_a),
            b: PyRecord::from(p.record_b),
            label: p.label,
        })
        .collect())
}

/// Replace the single `<word/>` span in `original` with `edit`.
#[pyfunction]
fn apply_edit(original: &str, edit: &str) -> PyResult<String> {
    corpus::apply_edit(original, edit).map_err(to_py)
}

/// Lowercase and split a headline into word tokens.
#[pyfunction]
fn tokenize(headline: &str) -> Vec<String> {
    text::tokenize(headline)
}

/// Write embedding vectors in the word2vec binary format.
#[pyfunction]
#[pyo3(signature = (path, entries, trailing_newline=false))]
fn write_word2vec_binary(
    path: PathBuf,
    entries: Vec<(String, Vec<f32>)>,
    trailing_newline: bool,
) -> PyResult<()> {
    quip::embed::write_word2vec_binary(&path, &entries, trailing_newline).map_err(to_py)
}

// ------------------------------------------------------------ vocabulary --

/// Token-to-id mapping. Ids 0 and 1 are reserved for padding and
/// out-of-vocabulary tokens; real tokens start at 2.
#[pyclass(name = "Vocab")]
struct PyVocab {
    inner: text::Vocab,
}

#[pymethods]
impl PyVocab {
    /// Build from tokenized documents (first-seen order, duplicates merged).
    #[staticmethod]
    fn build(docs: Vec<Vec<String>>) -> PyResult<PyVocab> {
        let slices: Vec<&[String]> = docs.iter().map(|d| d.as_slice()).collect();
        Ok(PyVocab {
            inner: text::Vocab::build(slices).map_err(to_py)?,
        })
    }

    /// Load a vocabulary file (one token per line, id = line index + 2).
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<PyVocab> {
        Ok(PyVocab {
            inner: text::Vocab::load(&path).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(to_py)
    }

    /// Total id count, reserved ids included.
    fn size(&self) -> usize {
        self.inner.size()
    }

    fn __len__(&self) -> usize {
        self.inner.size()
    }

    /// Map tokens to ids; unknown tokens become the out-of-vocabulary id.
    fn encode(&self, tokens: Vec<String>) -> Vec<usize> {
        self.inner.encode(&tokens)
    }

    /// The token for an id, if the id names one.
    fn token(&self, id: usize) -> Option<String> {
        self.inner.token(id).map(str::to_owned)
    }

    fn __repr__(&self) -> String {
        format!("Vocab(size={})", self.inner.size())
    }
}

// ----------------------------------------------------------------- model --

/// A trained model restored from a checkpoint, paired with the vocabulary
/// it was trained under.
#[pyclass(name = "Model")]
struct PyModel {
    model: ModelState<f32>,
    vocab: text::Vocab,
    config: TrainConfig,
    epoch: usize,
}

impl PyModel {
    fn examples_from_texts(&self, texts: &[String]) -> Vec<Example> {
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let tokens = text::tokenize(t);
                let mut ids = self.vocab.encode(&tokens);
                let true_length = ids.len().min(self.config.seq_len);
                ids.truncate(self.config.seq_len);
                ids.resize(self.config.seq_len, text::PAD_ID);
                Example {
                    id: i.to_string(),
                    tokens: ids,
                    true_length,
                    target: None,
                }
            })
            .collect()
    }

    fn grades(&self, texts: &[String], clamp: bool) -> PyResult<Vec<f64>> {
        let examples = self.examples_from_texts(texts);
        let mut preds = quip::train::predict(&examples, &self.model, self.config.batch_size)
            .map_err(to_py)?;
        if clamp {
            for p in preds.iter_mut() {
                *p = eval::clamp_grade(*p);
            }
        }
        Ok(preds)
    }
}

#[pymethods]
impl PyModel {
    /// Restore a model from a checkpoint file and its vocabulary file.
    #[staticmethod]
    fn load(checkpoint: PathBuf, vocab: PathBuf) -> PyResult<PyModel> {
        let ckpt = load_checkpoint(&checkpoint).map_err(to_py)?;
        let vocab = text::Vocab::load(&vocab).map_err(to_py)?;
        if vocab.size() != ckpt.model.embedding.vocab_size() {
            return Err(PyValueError::new_err(format!(
                "vocabulary size {} does not match checkpoint embedding rows {}",
                vocab.size(),
                ckpt.model.embedding.vocab_size()
            )));
        }
        Ok(PyModel {
            model: ckpt.model,
            vocab,
            config: ckpt.config,
            epoch: ckpt.epoch,
        })
    }

    #[getter]
    fn seq_len(&self) -> usize {
        self.config.seq_len
    }

    #[getter]
    fn dim(&self) -> usize {
        self.config.dim
    }

    #[getter]
    fn hidden(&self) -> usize {
        self.config.hidden
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.config.seed
    }

    #[getter]
    fn epoch(&self) -> usize {
        self.epoch
    }

    #[getter]
    fn vocab_size(&self) -> usize {
        self.vocab.size()
    }

    /// Predict grades for already-edited headlines.
    #[pyo3(signature = (texts, clamp=true))]
    fn predict_edited(&self, texts: Vec<String>, clamp: bool) -> PyResult<Vec<f64>> {
        self.grades(&texts, clamp)
    }

    /// Apply each edit to its headline, then predict grades.
    #[pyo3(signature = (originals, edits, clamp=true))]
    fn predict(&self, originals: Vec<String>, edits: Vec<String>, clamp: bool) -> PyResult<Vec<f64>> {
        if originals.len() != edits.len() {
            return Err(PyValueError::new_err(format!(
                "{} originals but {} edits",
                originals.len(),
                edits.len()
            )));
        }
        let texts: Vec<String> = originals
            .iter()
            .zip(&edits)
            .map(|(o, e)| corpus::apply_edit(o, e).map_err(to_py))
            .collect::<PyResult<_>>()?;
        self.grades(&texts, clamp)
    }

    /// Decide, for each headline, which of two edits is funnier:
    /// 2 if the second scores strictly higher, otherwise 1.
    fn predict_pair_labels(
        &self,
        originals: Vec<String>,
        edits_a: Vec<String>,
        edits_b: Vec<String>,
    ) -> PyResult<Vec<u32>> {
        let a = self.predict(originals.clone(), edits_a, true)?;
        let b = self.predict(originals, edits_b, true)?;
        // u32 so Python sees a list of ints (a Vec<u8> would convert to bytes).
        Ok(a.iter()
            .zip(&b)
            .map(|(&ga, &gb)| eval::compare_pair(ga, gb) as u32)
            .collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(vocab_size={}, dim={}, hidden={}, seq_len={}, epoch={})",
            self.vocab.size(),
            self.config.dim,
            self.config.hidden,
            self.config.seq_len,
            self.epoch
        )
    }
}

// --------------------------------------------------------------- metrics --

/// Pair-task scores: accuracy and reward over the non-tie pairs.
#[pyclass(name = "PairMetrics", frozen)]
struct PyPairMetrics {
    #[pyo3(get)]
    accuracy: f64,
    #[pyo3(get)]
    reward: f64,
    #[pyo3(get)]
    n_pairs: usize,
    #[pyo3(get)]
    n_ties_excluded: usize,
}

#[pymethods]
impl PyPairMetrics {
    fn __repr__(&self) -> String {
        format!(
            "PairMetrics(accuracy={}, reward={}, n_pairs={}, n_ties_excluded={})",
            self.accuracy, self.reward, self.n_pairs, self.n_ties_excluded
        )
    }
}

/// Root-mean-squared error between predictions and true grades.
#[pyfunction]
fn rmse(pred: Vec<f64>, truth: Vec<f64>) -> PyResult<f64> {
    eval::rmse(&pred, &truth).map_err(to_py)
}

/// RMSE over the top k percent of examples, ranked by `basis`
/// ("truth" or "prediction"), highest first with stable ties.
#[pyfunction]
#[pyo3(signature = (pred, truth, k, basis="truth"))]
fn rmse_at_k(pred: Vec<f64>, truth: Vec<f64>, k: usize, basis: &str) -> PyResult<f64> {
    let basis = match basis {
        "truth" => eval::RankBasis::Truth,
        "prediction" => eval::RankBasis::Prediction,
        other => {
            return Err(PyValueError::new_err(format!(
                "basis must be \"truth\" or \"prediction\", got {other:?}"
            )))
        }
    };
    eval::rmse_at_k_by(&pred, &truth, k, basis).map_err(to_py)
}

/// 2 if `pred_b` is strictly greater than `pred_a`, otherwise 1.
#[pyfunction]
fn compare_pair(pred_a: f64, pred_b: f64) -> u8 {
    eval::compare_pair(pred_a, pred_b)
}

/// Clamp a grade to the valid [0, 3] range.
#[pyfunction]
fn clamp_grade(value: f64) -> f64 {
    eval::clamp_grade(value)
}

/// Score predicted pair labels against truth labels and grade differences
/// (side a minus side b). Label-0 ties are excluded but counted.
#[pyfunction]
fn score_pairs(labels: Vec<u8>, deltas: Vec<f64>, pred_labels: Vec<u8>) -> PyResult<PyPairMetrics> {
    let m = eval::score_labels(&labels, &deltas, &pred_labels).map_err(to_py)?;
    Ok(PyPairMetrics {
        accuracy: m.accuracy,
        reward: m.reward,
        n_pairs: m.n_pairs,
        n_ties_excluded: m.n_ties_excluded,
    })
}

// -------------------------------------------------------------- training --

/// Verify analytic gradients against central finite differences on a tiny
/// model. Returns `(passed, report_text)`.
#[pyfunction]
#[pyo3(signature = (seed=42))]
fn gradcheck(seed: u64) -> PyResult<(bool, String)> {
    let report = quip::train::gradcheck::gradcheck(seed).map_err(to_py)?;
    Ok((report.pass, report.render()))
}

/// Train a model from CSV files, writing the vocabulary, training history,
/// and `last.ckpt` / `best.ckpt` checkpoints into `output_dir`.
///
/// `config` names an optional `key = value` file; keyword arguments use the
/// same keys and override it (`train_csv`, `embeddings`, `output_dir` are
/// required, plus e.g. `dev_csv`, `epochs`, `batch_size`, `learning_rate`,
/// `hidden`, `dim`, `seq_len`, `seed`, `clip_norm`).
#[pyfunction]
#[pyo3(signature = (config=None, **options))]
fn train(config: Option<PathBuf>, options: Option<&Bound<'_, PyDict>>) -> PyResult<()> {
    let mut overrides: Vec<(String, String)> = Vec::new();
    if let Some(opts) = options {
        for (k, v) in opts.iter() {
            let key: String = k.extract()?;
            let value = if v.is_none() {
                "none".to_string()
            } else if let Ok(flag) = v.extract::<bool>() {
                flag.to_string()
            } else {
                v.str()?.to_cow()?.into_owned()
            };
            overrides.push((key, value));
        }
    }
    let run = RunConfig::from_sources(config.as_deref(), &overrides).map_err(to_py)?;
    cmd_train(&run).map_err(to_py)
}

#[pymodule]
fn quip_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRecord>()?;
    m.add_class::<PyPair>()?;
    m.add_class::<PyVocab>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyPairMetrics>()?;
    m.add_function(wrap_pyfunction!(load_task1_csv, m)?)?;
    m.add_function(wrap_pyfunction!(load_task2_csv, m)?)?;
    m.add_function(wrap_pyfunction!(apply_edit, m)?)?;
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(write_word2vec_binary, m)?)?;
    m.add_function(wrap_pyfunction!(rmse, m)?)?;
    m.add_function(wrap_pyfunction!(rmse_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(compare_pair, m)?)?;
    m.add_function(wrap_pyfunction!(clamp_grade, m)?)?;
    m.add_function(wrap_pyfunction!(score_pairs, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add("PAD_ID", text::PAD_ID)?;
    m.add("UNK_ID", text::UNK_ID)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
