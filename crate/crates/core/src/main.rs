//! `quip` — train, predict with, and score a headline-funniness regressor.
//!
//! Every config key can live in a `key = value` file passed with
//! `--config`, and every key is also a `--key value` flag; flags win.
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use quip::pipeline::{
    cmd_eval_task1, cmd_eval_task2, cmd_gradcheck, cmd_predict, cmd_train, RunConfig,
};

#[derive(Parser)]
#[command(
    name = "quip",
    version,
    about = "Headline funniness regression: BiLSTM grade model, training, prediction, and scoring"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes vocab.txt, history.csv, last.ckpt, best.ckpt.
    Train(RunArgs),
    /// Predict grades (single headlines) or funnier-side labels (pairs).
    Predict(RunArgs),
    /// Score grade predictions: RMSE and RMSE@{10,20,30}.
    EvalTask1(RunArgs),
    /// Score funnier-side labels: accuracy and reward.
    EvalTask2(RunArgs),
    /// Compare analytic gradients against finite differences.
    Gradcheck(RunArgs),
}

/// One flag per config key; names match the config-file keys exactly.
/// Values are parsed by the same code path as the file, so errors and
/// semantics are identical.
#[derive(Args, Default)]
struct RunArgs {
    /// Flat `key = value` config file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,

    // Training schedule ----------------------------------------------------
    /// Number of passes over the training data.
    #[arg(long = "epochs")]
    epochs: Option<String>,
    /// Examples per optimizer step (minimum 2).
    #[arg(long = "batch_size")]
    batch_size: Option<String>,
    /// RMSprop step size.
    #[arg(long = "learning_rate")]
    learning_rate: Option<String>,
    /// RMSprop accumulator decay, in (0, 1).
    #[arg(long = "rho")]
    rho: Option<String>,
    /// RMSprop denominator guard.
    #[arg(long = "eps")]
    eps: Option<String>,
    /// Token window length; longer headlines are truncated.
    #[arg(long = "seq_len")]
    seq_len: Option<String>,
    /// LSTM hidden units per direction.
    #[arg(long = "hidden")]
    hidden: Option<String>,
    /// Embedding width (must match the embedding file).
    #[arg(long = "dim")]
    dim: Option<String>,
    /// Seed for every random draw in the run.
    #[arg(long = "seed")]
    seed: Option<String>,
    /// Reshuffle training data each epoch (true/false).
    #[arg(long = "shuffle")]
    shuffle: Option<String>,
    /// Clamp predictions to [0, 3] when evaluating and predicting.
    #[arg(long = "clamp_eval")]
    clamp_eval: Option<String>,
    /// Mean-pool LSTM outputs instead of last/first concatenation.
    #[arg(long = "mean_pool")]
    mean_pool: Option<String>,
    /// Rectify the head output.
    #[arg(long = "relu_head")]
    relu_head: Option<String>,
    /// Batch-norm variance guard.
    #[arg(long = "bn_epsilon")]
    bn_epsilon: Option<String>,
    /// Batch-norm running-statistics momentum, in [0, 1).
    #[arg(long = "bn_momentum")]
    bn_momentum: Option<String>,
    /// Global-norm gradient cap, or `none`.
    #[arg(long = "clip_norm")]
    clip_norm: Option<String>,
    /// Ranking basis for RMSE@k: `truth` or `prediction`.
    #[arg(long = "rank_basis")]
    rank_basis: Option<String>,
    /// Gradcheck self-test: negate this tensor's analytic gradient.
    #[arg(long = "fault")]
    fault: Option<String>,

    // Paths -----------------------------------------------------------------
    /// Labeled training CSV (id, original, edit, meanGrade).
    #[arg(long = "train_csv")]
    train_csv: Option<String>,
    /// Labeled development CSV for best-model selection.
    #[arg(long = "dev_csv")]
    dev_csv: Option<String>,
    /// Pretrained word vectors in word2vec binary format.
    #[arg(long = "embeddings")]
    embeddings: Option<String>,
    /// Vocabulary file (one token per line) written by `train`.
    #[arg(long = "vocab")]
    vocab: Option<String>,
    /// Model checkpoint to load.
    #[arg(long = "checkpoint")]
    checkpoint: Option<String>,
    /// Directory for training artifacts.
    #[arg(long = "output_dir")]
    output_dir: Option<String>,
    /// CSV to predict on (single-headline or pair schema).
    #[arg(long = "input_csv")]
    input_csv: Option<String>,
    /// Prediction CSV: written by `predict`, read by `eval-task1/2`.
    #[arg(long = "predictions")]
    predictions: Option<String>,
    /// Labeled gold CSV to score against.
    #[arg(long = "gold")]
    gold: Option<String>,
    /// Also write the JSON metrics report here.
    #[arg(long = "report")]
    report: Option<String>,
}

impl RunArgs {
    fn overrides(&self) -> Vec<(String, String)> {
        let pairs: [(&str, &Option<String>); 28] = [
            ("epochs", &self.epochs),
            ("batch_size", &self.batch_size),
            ("learning_rate", &self.learning_rate),
            ("rho", &self.rho),
            ("eps", &self.eps),
            ("seq_len", &self.seq_len),
            ("hidden", &self.hidden),
            ("dim", &self.dim),
            ("seed", &self.seed),
            ("shuffle", &self.shuffle),
            ("clamp_eval", &self.clamp_eval),
            ("mean_pool", &self.mean_pool),
            ("relu_head", &self.relu_head),
            ("bn_epsilon", &self.bn_epsilon),
            ("bn_momentum", &self.bn_momentum),
            ("clip_norm", &self.clip_norm),
            ("rank_basis", &self.rank_basis),
            ("fault", &self.fault),
            ("train_csv", &self.train_csv),
            ("dev_csv", &self.dev_csv),
            ("embeddings", &self.embeddings),
            ("vocab", &self.vocab),
            ("checkpoint", &self.checkpoint),
            ("output_dir", &self.output_dir),
            ("input_csv", &self.input_csv),
            ("predictions", &self.predictions),
            ("gold", &self.gold),
            ("report", &self.report),
        ];
        pairs
            .into_iter()
            .filter_map(|(key, value)| {
                value.as_ref().map(|v| (key.to_string(), v.clone()))
            })
            .collect()
    }

    fn into_run_config(self) -> quip::Result<RunConfig> {
        RunConfig::from_sources(self.config.as_deref(), &self.overrides())
    }
}

fn run(cli: Cli) -> quip::Result<()> {
    match cli.command {
        Command::Train(args) => cmd_train(&args.into_run_config()?),
        Command::Predict(args) => cmd_predict(&args.into_run_config()?),
        Command::EvalTask1(args) => cmd_eval_task1(&args.into_run_config()?),
        Command::EvalTask2(args) => cmd_eval_task2(&args.into_run_config()?),
        Command::Gradcheck(args) => cmd_gradcheck(&args.into_run_config()?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // --help/--version are successful exits; everything else is a
            // usage error (exit 1, same class as bad config values).
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
