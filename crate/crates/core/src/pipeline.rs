//! Command drivers: everything between the argument parser and the library.
//! Each `cmd_*` function is one subcommand; all of them are deterministic
//! given their inputs, so re-running a command overwrites its outputs with
//! identical bytes.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{self, Example, PairRecord};
use crate::embed::load_word2vec_binary;
use crate::error::{Error, Result};
use crate::eval::{
    clamp_grade, compare_pair, task2_metrics_from_predicted_labels, MetricsReport, RankBasis,
};
use crate::net::ModelState;
use crate::text::{tokenize, Vocab};
use crate::train::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::train::gradcheck::gradcheck_with_fault;
use crate::train::{predict, train, TrainConfig};

/// A full run description: the numeric [`TrainConfig`] plus file locations
/// and evaluation knobs. Built from defaults, then a key-value config file,
/// then command-line overrides, in that order.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub train_csv: Option<PathBuf>,
    pub dev_csv: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub input_csv: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub gold: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub rank_basis: RankBasis,
    /// Gradcheck self-test: negate this tensor's analytic gradient.
    pub fault: Option<String>,
    /// Keys set by the user (file or flag), as opposed to defaults. Commands
    /// that read a checkpoint prefer its stored values for unset keys.
    explicit: BTreeSet<String>,
}

impl Default for RunConfig {
    fn default() -> RunConfig {
        RunConfig {
            train: TrainConfig::default(),
            train_csv: None,
            dev_csv: None,
            embeddings: None,
            vocab: None,
            checkpoint: None,
            output_dir: None,
            input_csv: None,
            predictions: None,
            gold: None,
            report: None,
            rank_basis: RankBasis::Truth,
            fault: None,
            explicit: BTreeSet::new(),
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str, what: &str) -> Result<T> {
    value.parse().map_err(|_| {
        Error::Config(format!("config key {key}: `{value}` is not {what}"))
    })
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(Error::Config(format!(
            "config key {key}: `{value}` is not a boolean (true/false/1/0)"
        ))),
    }
}

impl RunConfig {
    /// Set one key. Key names match the field names exactly; they are the
    /// config-file keys and the `--key value` command-line flags.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "epochs" => self.train.epochs = parse_value(key, value, "a whole number")?,
            "batch_size" => self.train.batch_size = parse_value(key, value, "a whole number")?,
            "learning_rate" => self.train.learning_rate = parse_value(key, value, "a number")?,
            "rho" => self.train.rho = parse_value(key, value, "a number")?,
            "eps" => self.train.eps = parse_value(key, value, "a number")?,
            "seq_len" => self.train.seq_len = parse_value(key, value, "a whole number")?,
            "hidden" => self.train.hidden = parse_value(key, value, "a whole number")?,
            "dim" => self.train.dim = parse_value(key, value, "a whole number")?,
            "seed" => self.train.seed = parse_value(key, value, "a whole number")?,
            "shuffle" => self.train.shuffle = parse_bool(key, value)?,
            "clamp_eval" => self.train.clamp_eval = parse_bool(key, value)?,
            "mean_pool" => self.train.mean_pool = parse_bool(key, value)?,
            "relu_head" => self.train.relu_head = parse_bool(key, value)?,
            "bn_epsilon" => self.train.bn_epsilon = parse_value(key, value, "a number")?,
            "bn_momentum" => self.train.bn_momentum = parse_value(key, value, "a number")?,
            "clip_norm" => {
                self.train.clip_norm = if value == "none" {
                    None
                } else {
                    Some(parse_value(key, value, "a number or `none`")?)
                }
            }
            "rank_basis" => {
                self.rank_basis = match value {
                    "truth" => RankBasis::Truth,
                    "prediction" => RankBasis::Prediction,
                    _ => {
                        return Err(Error::Config(format!(
                            "config key rank_basis: `{value}` is not `truth` or `prediction`"
                        )))
                    }
                }
            }
            "fault" => self.fault = Some(value.to_string()),
            "train_csv" => self.train_csv = Some(PathBuf::from(value)),
            "dev_csv" => self.dev_csv = Some(PathBuf::from(value)),
            "embeddings" => self.embeddings = Some(PathBuf::from(value)),
            "vocab" => self.vocab = Some(PathBuf::from(value)),
            "checkpoint" => self.checkpoint = Some(PathBuf::from(value)),
            "output_dir" => self.output_dir = Some(PathBuf::from(value)),
            "input_csv" => self.input_csv = Some(PathBuf::from(value)),
            "predictions" => self.predictions = Some(PathBuf::from(value)),
            "gold" => self.gold = Some(PathBuf::from(value)),
            "report" => self.report = Some(PathBuf::from(value)),
            _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
        }
        self.explicit.insert(key.to_string());
        Ok(())
    }

    /// Read a flat `key = value` file: one pair per line, `#` starts a
    /// comment line, blank lines ignored.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "{}:{}: expected `key = value`, got `{line}`",
                    path.display(),
                    lineno + 1
                ))
            })?;
            self.apply(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Defaults, then the optional config file, then flag overrides.
    pub fn from_sources(config_file: Option<&Path>, overrides: &[(String, String)]) -> Result<RunConfig> {
        let mut run = RunConfig::default();
        if let Some(path) = config_file {
            run.apply_file(path)?;
        }
        for (key, value) in overrides {
            run.apply(key, value)?;
        }
        Ok(run)
    }

    fn was_set(&self, key: &str) -> bool {
        self.explicit.contains(key)
    }
}

fn require<'a>(opt: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    opt.as_deref().ok_or_else(|| {
        Error::Config(format!("missing required --{flag} (config key `{flag}`)"))
    })
}

fn create_writer(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).map_err(|e| Error::io(path, e))?,
    ))
}

/// Train end to end: ingest, build the vocabulary, initialize from the
/// embedding file, run the schedule, and write the four artifacts
/// (`vocab.txt`, `history.csv`, `last.ckpt`, `best.ckpt`) into the output
/// directory.
pub fn cmd_train(run: &RunConfig) -> Result<()> {
    let train_path = require(&run.train_csv, "train_csv")?;
    let emb_path = require(&run.embeddings, "embeddings")?;
    let out_dir = require(&run.output_dir, "output_dir")?;
    let config = run.train.clone();
    config.validate()?;

    let records = corpus::load_task1_csv(train_path)?;
    let docs: Vec<Vec<String>> = records
        .iter()
        .map(|r| {
            corpus::apply_edit(&r.original, &r.edit)
                .map(|edited| tokenize(&edited))
                .map_err(|e| Error::Format(format!("record {}: {e}", r.id)))
        })
        .collect::<Result<_>>()?;
    let vocab = Vocab::build(docs.iter().map(|d| d.as_slice()))?;
    println!(
        "training data: {} records, vocabulary {} tokens",
        records.len(),
        vocab.size()
    );

    // One PRNG stream drives everything: out-of-vocabulary embedding rows,
    // layer initialization, then epoch shuffles.
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (table, coverage) = load_word2vec_binary(emb_path, &vocab, config.dim, &mut rng)?;
    println!(
        "embedding coverage: {} hits, {} misses",
        coverage.hits, coverage.misses
    );
    let model = ModelState::init(config.model_config(), table, &mut rng)?;

    let (examples, ingest) = corpus::to_examples(&records, &vocab, config.seq_len);
    if !ingest.empty_after_tokenize.is_empty() {
        println!(
            "warning: {} records tokenized to nothing: {}",
            ingest.empty_after_tokenize.len(),
            ingest.empty_after_tokenize.join(", ")
        );
    }
    let dev_examples = match &run.dev_csv {
        Some(path) => {
            let dev_records = corpus::load_task1_csv(path)?;
            let (dev, dev_ingest) = corpus::to_examples(&dev_records, &vocab, config.seq_len);
            println!("dev data: {} records", dev_ingest.records);
            Some(dev)
        }
        None => None,
    };

    let outcome = train(
        &examples,
        dev_examples.as_deref(),
        model,
        &config,
        rng,
        |stats| match stats.dev_rmse {
            Some(r) => println!(
                "epoch {}: train_mse {:.6} dev_rmse {:.6}",
                stats.epoch, stats.train_mse, r
            ),
            None => println!("epoch {}: train_mse {:.6}", stats.epoch, stats.train_mse),
        },
    )?;

    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let vocab_path = out_dir.join("vocab.txt");
    vocab.save(&vocab_path)?;

    let history_path = out_dir.join("history.csv");
    let mut hist = create_writer(&history_path)?;
    let io_err = |e| Error::io(&history_path, e);
    writeln!(hist, "# seed={}", config.seed).map_err(io_err)?;
    writeln!(hist, "epoch,train_mse,dev_rmse").map_err(io_err)?;
    for row in &outcome.history {
        match row.dev_rmse {
            Some(r) => writeln!(hist, "{},{},{}", row.epoch, row.train_mse, r),
            None => writeln!(hist, "{},{},", row.epoch, row.train_mse),
        }
        .map_err(io_err)?;
    }
    hist.flush().map_err(io_err)?;

    // `last` resumes; `best` is the dev-selected snapshot for inference
    // (it shares the final optimizer and PRNG state).
    let last = Checkpoint {
        config: config.clone(),
        epoch: outcome.history.len(),
        model: outcome.model,
        opt: outcome.opt,
        rng: outcome.rng,
    };
    save_checkpoint(&out_dir.join("last.ckpt"), &last)?;
    let best = Checkpoint {
        epoch: outcome.best_epoch + 1,
        model: outcome.best_model,
        ..last
    };
    save_checkpoint(&out_dir.join("best.ckpt"), &best)?;

    match outcome.history.last().and_then(|row| row.dev_rmse) {
        Some(r) => {
            let best_rmse = outcome.history[outcome.best_epoch]
                .dev_rmse
                .expect("best epoch has a dev score");
            println!("final dev RMSE {r:.6}; best {best_rmse:.6} at epoch {}", outcome.best_epoch);
        }
        None => {
            if let Some(row) = outcome.history.last() {
                println!("final train MSE {:.6} (no dev set)", row.train_mse);
            }
        }
    }
    println!("artifacts written to {}", out_dir.display());
    Ok(())
}

/// True when the file's header row carries the paired-headline schema.
fn is_pair_file(path: &Path) -> Result<bool> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    Ok(headers.iter().any(|h| h == "original1"))
}

struct LoadedModel {
    model: ModelState<f32>,
    vocab: Vocab,
    seed: u64,
    seq_len: usize,
    batch_size: usize,
    clamp: bool,
}

fn load_model_for_inference(run: &RunConfig) -> Result<LoadedModel> {
    let ckpt_path = require(&run.checkpoint, "checkpoint")?;
    let vocab_path = require(&run.vocab, "vocab")?;
    let ckpt = load_checkpoint(ckpt_path)?;
    let vocab = Vocab::load(vocab_path)?;
    if vocab.size() != ckpt.model.embedding.vocab_size() {
        return Err(Error::DimMismatch {
            what: "vocabulary size vs checkpoint embedding rows",
            expected: ckpt.model.embedding.vocab_size(),
            found: vocab.size(),
        });
    }
    // User-set values override the checkpoint; untouched keys follow it.
    let clamp = if run.was_set("clamp_eval") {
        run.train.clamp_eval
    } else {
        ckpt.config.clamp_eval
    };
    let batch_size = if run.was_set("batch_size") {
        run.train.batch_size
    } else {
        ckpt.config.batch_size
    };
    Ok(LoadedModel {
        seed: ckpt.config.seed,
        seq_len: ckpt.config.seq_len,
        model: ckpt.model,
        vocab,
        batch_size,
        clamp,
    })
}

fn predict_grades(examples: &[Example], lm: &LoadedModel) -> Result<Vec<f64>> {
    let mut preds = predict(examples, &lm.model, lm.batch_size)?;
    if lm.clamp {
        for p in preds.iter_mut() {
            *p = clamp_grade(*p);
        }
    }
    Ok(preds)
}

fn side_examples(pairs: &[PairRecord], lm: &LoadedModel, side_a: bool) -> Vec<Example> {
    pairs
        .iter()
        .map(|p| {
            let rec = if side_a { &p.record_a } else { &p.record_b };
            corpus::to_example(rec, &lm.vocab, lm.seq_len)
        })
        .collect()
}

/// Predict grades (single-headline input) or funnier-side labels (paired
/// input, decided by the header row) and write the prediction CSV.
pub fn cmd_predict(run: &RunConfig) -> Result<()> {
    let input = require(&run.input_csv, "input_csv")?;
    let out_path = require(&run.predictions, "predictions")?;
    let lm = load_model_for_inference(run)?;

    let mut out = create_writer(out_path)?;
    let io_err = |e| Error::io(out_path, e);
    writeln!(out, "# seed={}", lm.seed).map_err(io_err)?;
    if is_pair_file(input)? {
        let pairs = corpus::load_task2_csv(input)?;
        let preds_a = predict_grades(&side_examples(&pairs, &lm, true), &lm)?;
        let preds_b = predict_grades(&side_examples(&pairs, &lm, false), &lm)?;
        writeln!(out, "id,pred_label").map_err(io_err)?;
        for ((pair, &pa), &pb) in pairs.iter().zip(&preds_a).zip(&preds_b) {
            writeln!(out, "{},{}", pair.id, compare_pair(pa, pb)).map_err(io_err)?;
        }
        println!("wrote {} pair labels to {}", pairs.len(), out_path.display());
    } else {
        let records = corpus::load_task1_csv(input)?;
        let (examples, _) = corpus::to_examples(&records, &lm.vocab, lm.seq_len);
        let preds = predict_grades(&examples, &lm)?;
        writeln!(out, "id,pred").map_err(io_err)?;
        for (rec, p) in records.iter().zip(&preds) {
            writeln!(out, "{},{}", rec.id, p).map_err(io_err)?;
        }
        println!(
            "wrote {} predictions to {}",
            records.len(),
            out_path.display()
        );
    }
    out.flush().map_err(io_err)?;
    Ok(())
}

/// Read a two-column prediction file written by `cmd_predict` (or any file
/// with the same schema). `#` lines are comments; the value column is
/// parsed by `parse`.
fn read_prediction_file<T>(
    path: &Path,
    value_column: &str,
    parse: impl Fn(usize, &str) -> Result<T>,
) -> Result<Vec<(String, T)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
        .clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let id_col = col("id")?;
    let val_col = col(value_column)?;
    let mut rows = Vec::new();
    for (idx, row) in reader.records().enumerate() {
        let row_no = idx + 1;
        let record = row.map_err(|e| Error::Parse {
            row: row_no,
            msg: e.to_string(),
        })?;
        let field = |c: usize| {
            record.get(c).ok_or_else(|| Error::Parse {
                row: row_no,
                msg: format!("row has only {} fields", record.len()),
            })
        };
        let id = field(id_col)?.trim().to_string();
        let value = parse(row_no, field(val_col)?.trim())?;
        rows.push((id, value));
    }
    Ok(rows)
}

fn read_grade_predictions(path: &Path) -> Result<Vec<(String, f64)>> {
    read_prediction_file(path, "pred", |row, s| {
        s.parse::<f64>().map_err(|_| Error::Parse {
            row,
            msg: format!("pred: `{s}` is not a number"),
        })
    })
}

fn read_label_predictions(path: &Path) -> Result<Vec<(String, u8)>> {
    read_prediction_file(path, "pred_label", |row, s| {
        match s.parse::<u8>() {
            Ok(v) if v <= 2 => Ok(v),
            _ => Err(Error::Parse {
                row,
                msg: format!("pred_label: `{s}` is not 0, 1, or 2"),
            }),
        }
    })
}

/// Align predictions to gold rows by id. The two id sets must match
/// exactly; the first offending id (gold-side first, in file order) is
/// reported otherwise.
fn join_by_id<T: Clone>(gold_ids: &[String], preds: &[(String, T)]) -> Result<Vec<T>> {
    let mut by_id: HashMap<&str, &T> = HashMap::with_capacity(preds.len());
    for (id, value) in preds {
        if by_id.insert(id.as_str(), value).is_some() {
            return Err(Error::Format(format!("duplicate id `{id}` in predictions")));
        }
    }
    let mut gold_set: HashSet<&str> = HashSet::with_capacity(gold_ids.len());
    for id in gold_ids {
        if !gold_set.insert(id.as_str()) {
            return Err(Error::Format(format!("duplicate id `{id}` in gold data")));
        }
    }
    let mut joined = Vec::with_capacity(gold_ids.len());
    for id in gold_ids {
        match by_id.get(id.as_str()) {
            Some(value) => joined.push((*value).clone()),
            None => return Err(Error::IdMismatch(format!("{id} (missing from predictions)"))),
        }
    }
    for (id, _) in preds {
        if !gold_set.contains(id.as_str()) {
            return Err(Error::IdMismatch(format!("{id} (not in gold data)")));
        }
    }
    Ok(joined)
}

fn emit_report(report: &MetricsReport, out: &Option<PathBuf>) -> Result<()> {
    let json = serde_json::to_string_pretty(report)
        .expect("metrics report serializes");
    println!("{json}");
    if let Some(path) = out {
        let mut w = create_writer(path)?;
        writeln!(w, "{json}").map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Score grade predictions against labeled single-headline gold data:
/// RMSE, RMSE@{10,20,30}, row count, as JSON.
pub fn cmd_eval_task1(run: &RunConfig) -> Result<()> {
    let pred_path = require(&run.predictions, "predictions")?;
    let gold_path = require(&run.gold, "gold")?;
    let gold = corpus::load_task1_csv(gold_path)?;
    let mut ids = Vec::with_capacity(gold.len());
    let mut truth = Vec::with_capacity(gold.len());
    for rec in &gold {
        let grade = rec.mean_grade.ok_or_else(|| {
            Error::Format(format!("gold record {} has no meanGrade", rec.id))
        })?;
        ids.push(rec.id.clone());
        truth.push(grade);
    }
    let preds = join_by_id(&ids, &read_grade_predictions(pred_path)?)?;
    let report = MetricsReport::task1(&preds, &truth, run.rank_basis)?;
    emit_report(&report, &run.report)
}

/// Score funnier-side labels against labeled pair gold data: accuracy and
/// reward over non-tie pairs, as JSON.
pub fn cmd_eval_task2(run: &RunConfig) -> Result<()> {
    let pred_path = require(&run.predictions, "predictions")?;
    let gold_path = require(&run.gold, "gold")?;
    let pairs = corpus::load_task2_csv(gold_path)?;
    let ids: Vec<String> = pairs.iter().map(|p| p.id.clone()).collect();
    let labels = join_by_id(&ids, &read_label_predictions(pred_path)?)?;
    let metrics = task2_metrics_from_predicted_labels(&pairs, &labels)?;
    let report = MetricsReport::from_task2(metrics);
    emit_report(&report, &run.report)
}

/// Verify analytic gradients against finite differences on a small model;
/// exit status reflects the verdict.
pub fn cmd_gradcheck(run: &RunConfig) -> Result<()> {
    let report = gradcheck_with_fault(run.train.seed, run.fault.as_deref())?;
    print!("{}", report.render());
    if report.pass {
        Ok(())
    } else {
        let failed: Vec<&str> = report
            .tensors
            .iter()
            .filter(|t| !t.pass)
            .map(|t| t.name)
            .collect();
        Err(Error::GradcheckFailed(failed.join(", ")))
    }
}
