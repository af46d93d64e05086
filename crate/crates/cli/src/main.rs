//! `bienc`: build vocabularies, train, evaluate, rank and sweep.
//!
//! Every flag can also be given in a flat `key=value` file passed with
//! `--config`; flags win over the file. Exit codes: 0 success, 1 usage or
//! configuration error, 2 data error, 3 numeric abort.

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::settings::Settings;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] bienc_core::Error),
    #[error("{failed} of {total} sweep runs failed")]
    Partial { failed: usize, total: usize, code: u8 },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        use bienc_core::Error as E;
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(E::InvalidArgument(_)) => 1,
            CliError::Core(E::NonFinite { .. }) => 3,
            CliError::Core(_) => 2,
            CliError::Partial { code, .. } => *code,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "bienc", version, about = "LSTM bi-encoder response selection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a vocabulary file from a training CSV.
    BuildVocab(BuildVocabArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a candidate-set CSV.
    Eval(EvalArgs),
    /// Rank free-text candidates for one context.
    Rank(RankArgs),
    /// Train and evaluate one model per value of a hyperparameter.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// Flat key=value settings file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// sequential | parallel
    #[arg(long)]
    execution: Option<String>,
}

#[derive(Debug, Args)]
struct BuildVocabArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    train: Option<String>,
    /// Minimum token count (default 5).
    #[arg(long)]
    min_count: Option<String>,
    #[arg(long)]
    out: Option<String>,
}

/// Data, model and optimizer flags shared by `train` and `sweep`.
#[derive(Debug, Args)]
struct TrainFlags {
    #[arg(long)]
    train: Option<String>,
    /// Candidate-set CSV evaluated after every epoch.
    #[arg(long)]
    val: Option<String>,
    /// Evaluate on at most this many validation sets.
    #[arg(long)]
    val_limit: Option<String>,
    #[arg(long)]
    vocab: Option<String>,
    /// Pretrained vectors, one `token v1 .. vd` per line.
    #[arg(long)]
    embeddings: Option<String>,
    #[arg(long)]
    context_len: Option<String>,
    #[arg(long)]
    response_len: Option<String>,
    #[arg(long)]
    learning_rate: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    max_steps: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    clip_norm: Option<String>,
    /// Print a progress record every N steps (0 = off, default 100).
    #[arg(long)]
    log_every: Option<String>,
    /// be | de
    #[arg(long)]
    arch: Option<String>,
    #[arg(long)]
    embed_dim: Option<String>,
    #[arg(long, alias = "cell-size")]
    hidden_size: Option<String>,
    #[arg(long)]
    depth: Option<String>,
    /// dot | cosine | polynomial | bilinear
    #[arg(long)]
    head: Option<String>,
    #[arg(long)]
    poly_degree: Option<String>,
    #[arg(long)]
    poly_offset: Option<String>,
    /// final | weighted
    #[arg(long)]
    pooling: Option<String>,
    #[arg(long)]
    link: Option<String>,
    #[arg(long)]
    freeze_embeddings: Option<String>,
}

impl TrainFlags {
    fn pairs(&self) -> Vec<(&'static str, Option<String>)> {
        vec![
            ("train", self.train.clone()),
            ("val", self.val.clone()),
            ("val_limit", self.val_limit.clone()),
            ("vocab", self.vocab.clone()),
            ("embeddings", self.embeddings.clone()),
            ("context_len", self.context_len.clone()),
            ("response_len", self.response_len.clone()),
            ("learning_rate", self.learning_rate.clone()),
            ("batch_size", self.batch_size.clone()),
            ("epochs", self.epochs.clone()),
            ("max_steps", self.max_steps.clone()),
            ("seed", self.seed.clone()),
            ("clip_norm", self.clip_norm.clone()),
            ("log_every", self.log_every.clone()),
            ("arch", self.arch.clone()),
            ("embed_dim", self.embed_dim.clone()),
            ("hidden_size", self.hidden_size.clone()),
            ("depth", self.depth.clone()),
            ("head", self.head.clone()),
            ("poly_degree", self.poly_degree.clone()),
            ("poly_offset", self.poly_offset.clone()),
            ("pooling", self.pooling.clone()),
            ("link", self.link.clone()),
            ("freeze_embeddings", self.freeze_embeddings.clone()),
        ]
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    flags: TrainFlags,
    /// Checkpoint path to write.
    #[arg(long)]
    out: Option<String>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: Option<String>,
    #[arg(long)]
    eval: Option<String>,
    /// Write the Recall@1..10 curve as CSV.
    #[arg(long)]
    cmc_out: Option<String>,
}

#[derive(Debug, Args)]
struct RankArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: Option<String>,
    #[arg(long)]
    context: Option<String>,
    /// One candidate response per line.
    #[arg(long)]
    candidates: Option<String>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    flags: TrainFlags,
    /// cell_size | batch_size
    #[arg(long)]
    param: Option<String>,
    /// Comma-separated values, e.g. 32,64,128
    #[arg(long)]
    values: Option<String>,
    /// Sweep CSV path to write.
    #[arg(long)]
    out: Option<String>,
}

fn settings(common: &Common, mut flags: Vec<(&'static str, Option<String>)>) -> Result<Settings, CliError> {
    flags.push(("execution", common.execution.clone()));
    Settings::load(common.config.as_deref(), flags)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::BuildVocab(a) => {
            let s = settings(
                &a.common,
                vec![("train", a.train), ("min_count", a.min_count), ("out", a.out)],
            )?;
            commands::build_vocab(&s)
        }
        Command::Train(a) => {
            let mut flags = a.flags.pairs();
            flags.push(("out", a.out));
            commands::train(&settings(&a.common, flags)?)
        }
        Command::Eval(a) => {
            let s = settings(
                &a.common,
                vec![("checkpoint", a.checkpoint), ("eval", a.eval), ("cmc_out", a.cmc_out)],
            )?;
            commands::eval(&s)
        }
        Command::Rank(a) => {
            let s = settings(
                &a.common,
                vec![
                    ("checkpoint", a.checkpoint),
                    ("context", a.context),
                    ("candidates", a.candidates),
                ],
            )?;
            commands::rank(&s)
        }
        Command::Sweep(a) => {
            let mut flags = a.flags.pairs();
            flags.extend([("param", a.param), ("values", a.values), ("out", a.out)]);
            commands::sweep(&settings(&a.common, flags)?)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
