use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use bienc_core::checkpoint::Checkpoint;
use bienc_core::corpus::{
    encode_text, load_train_set, read_eval_sets, read_train_examples, tokenize, Capacities, CandidateSet,
    DialogExample, Vocabulary, SPECIAL_TOKENS,
};
use bienc_core::embedding::EmbeddingTable;
use bienc_core::evaluation::{evaluate, rank_order, score_candidates, EvalReport};
use bienc_core::model::{ModelConfig, RankingModel};
use bienc_core::numkit::{mix64, Rng};
use bienc_core::par::Execution;
use bienc_core::train::{train as run_training, StepRecord, TrainConfig, TrainObserver};

use crate::settings::{Problems, Settings};
use crate::CliError;

fn capacities(s: &Settings, problems: &mut Problems) -> Capacities {
    let d = Capacities::default();
    let caps = Capacities {
        context: s.parsed("context_len", d.context, problems),
        response: s.parsed("response_len", d.response, problems),
    };
    if caps.context == 0 || caps.response == 0 {
        problems.push("context_len and response_len must be >= 1");
    }
    caps
}

fn optional_input(s: &Settings, key: &str, problems: &mut Problems) -> Option<PathBuf> {
    let p = s.path(key)?;
    if !p.is_file() {
        problems.push(format!("{key}: no such file {}", p.display()));
    }
    Some(p)
}

pub fn build_vocab(s: &Settings) -> Result<(), CliError> {
    let mut problems = Problems::default();
    let train = s.input_file("train", &mut problems);
    let out = s.required_path("out", &mut problems);
    let min_count: usize = s.parsed("min_count", 5, &mut problems);
    if min_count == 0 {
        problems.push("min_count must be >= 1");
    }
    problems.finish()?;

    let mut counts: HashMap<String, usize> = HashMap::new();
    for rec in load_train_set(&train)? {
        let rec = rec?;
        for text in [&rec.context, &rec.response] {
            for tok in tokenize(text) {
                if !SPECIAL_TOKENS.contains(&tok) {
                    *counts.entry(tok.to_string()).or_default() += 1;
                }
            }
        }
    }
    let vocab = Vocabulary::build(
        counts.iter().flat_map(|(tok, &n)| std::iter::repeat_n(tok.as_str(), n)),
        min_count,
    )?;
    vocab.save(&out)?;

    let total: usize = counts.values().sum();
    let covered: usize = counts.iter().filter(|(t, _)| vocab.id(t).is_some()).map(|(_, n)| n).sum();
    println!(
        "vocab_size={} regular={} min_count={min_count} out={}",
        vocab.len(),
        vocab.num_regular(),
        out.display()
    );
    println!(
        "types kept {}/{}, token coverage {covered}/{total} ({:.2}%)",
        vocab.num_regular(),
        counts.len(),
        if total == 0 { 0.0 } else { 100.0 * covered as f64 / total as f64 }
    );
    Ok(())
}

/// Everything `train` and `sweep` need, validated before any data is read.
struct TrainPlan {
    train: PathBuf,
    vocab: PathBuf,
    val: Option<PathBuf>,
    val_limit: Option<usize>,
    embeddings: Option<PathBuf>,
    caps: Capacities,
    log_every: usize,
    model: ModelConfig,
    train_cfg: TrainConfig,
}

impl TrainPlan {
    fn from_settings(s: &Settings, problems: &mut Problems) -> Self {
        TrainPlan {
            train: s.input_file("train", problems),
            vocab: s.input_file("vocab", problems),
            val: optional_input(s, "val", problems),
            val_limit: s.optional("val_limit", problems),
            embeddings: optional_input(s, "embeddings", problems),
            caps: capacities(s, problems),
            log_every: s.parsed("log_every", 100, problems),
            model: s.model_config(problems),
            train_cfg: s.train_config(problems),
        }
    }

    /// Snapshot stored in the checkpoint. Paths are left out so that the same
    /// run writes the same bytes wherever its inputs live.
    fn run_keys(&self) -> BTreeMap<String, String> {
        let t = &self.train_cfg;
        let mut m = BTreeMap::new();
        m.insert("learning_rate".into(), t.learning_rate.to_string());
        m.insert("batch_size".into(), t.batch_size.to_string());
        m.insert("epochs".into(), t.epochs.to_string());
        if let Some(ms) = t.max_steps {
            m.insert("max_steps".into(), ms.to_string());
        }
        m.insert("seed".into(), t.seed.to_string());
        m.insert("clip_norm".into(), t.clip_norm.to_string());
        m.insert("context_len".into(), self.caps.context.to_string());
        m.insert("response_len".into(), self.caps.response.to_string());
        m
    }
}

struct Data {
    vocab: Vocabulary,
    train: Vec<DialogExample>,
    val: Option<Vec<CandidateSet>>,
}

fn load_data(plan: &TrainPlan) -> Result<Data, CliError> {
    let vocab = Vocabulary::load(&plan.vocab)?;
    let train = read_train_examples(&plan.train, &vocab, plan.caps)?;
    let val = match &plan.val {
        Some(p) => {
            let mut sets = read_eval_sets(p, &vocab, plan.caps)?;
            if let Some(n) = plan.val_limit {
                sets.truncate(n);
            }
            Some(sets)
        }
        None => None,
    };
    Ok(Data { vocab, train, val })
}

fn fresh_model(plan: &TrainPlan, model: &ModelConfig, tc: &TrainConfig, vocab: &Vocabulary) -> Result<RankingModel, CliError> {
    let mut rng = Rng::new(tc.init_seed());
    let embedding = match &plan.embeddings {
        Some(p) => {
            let (table, cov) = EmbeddingTable::load_pretrained(p, vocab, model.embed_dim, &mut rng)?;
            println!("embeddings: {}/{} vocabulary tokens found", cov.found, cov.total);
            table
        }
        None => EmbeddingTable::init_random(vocab.len(), model.embed_dim, &mut rng)?,
    };
    Ok(RankingModel::new(model.clone(), embedding, &mut rng)?)
}

struct Progress<'a> {
    log_every: usize,
    val: Option<&'a [CandidateSet]>,
    execution: Execution,
    quiet: bool,
}

impl TrainObserver for Progress<'_> {
    fn on_step(&mut self, record: &StepRecord) {
        if !self.quiet && self.log_every > 0 && record.step.is_multiple_of(self.log_every) {
            println!("{record}");
        }
    }

    fn on_epoch_end(&mut self, epoch: usize, mean_loss: f64, model: &RankingModel) {
        if self.quiet {
            return;
        }
        println!("epoch={epoch} mean_loss={mean_loss:.6}");
        if let Some(sets) = self.val.filter(|v| !v.is_empty()) {
            match evaluate(model, sets, self.execution) {
                Ok(r) => println!("val epoch={epoch} {}", r.record()),
                Err(e) => eprintln!("val epoch={epoch} failed: {e}"),
            }
        }
    }
}

pub fn train(s: &Settings) -> Result<(), CliError> {
    let mut problems = Problems::default();
    let plan = TrainPlan::from_settings(s, &mut problems);
    let out = s.required_path("out", &mut problems);
    problems.finish()?;

    let data = load_data(&plan)?;
    let mut model = fresh_model(&plan, &plan.model, &plan.train_cfg, &data.vocab)?;
    println!(
        "training {} {} on {} examples, {} parameters",
        plan.model.arch.name(),
        plan.model.head.name(),
        data.train.len(),
        model.num_parameters()
    );
    let mut progress = Progress {
        log_every: plan.log_every,
        val: data.val.as_deref(),
        execution: plan.train_cfg.execution,
        quiet: false,
    };
    let stats = run_training(&mut model, &data.train, &plan.train_cfg, &mut progress)?;
    Checkpoint::from_model(&model, &data.vocab, &plan.run_keys()).save(&out)?;
    println!(
        "steps={} examples={} wall={:.1}s checkpoint={}",
        stats.step_losses.len(),
        stats.examples_seen,
        stats.wall_secs,
        out.display()
    );
    Ok(())
}

/// Model, vocabulary and sequence caps stored in a checkpoint.
fn load_checkpoint(path: &Path) -> Result<(RankingModel, Vocabulary, Capacities), CliError> {
    let ck = Checkpoint::load(path)?;
    let model = ck.model()?;
    let vocab = ck.vocabulary()?;
    let d = Capacities::default();
    let cap = |key: &str, default: usize| -> Result<usize, CliError> {
        match ck.config.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| {
                CliError::Core(bienc_core::Error::Checkpoint {
                    section: "config".into(),
                    message: format!("invalid {key} {v:?}"),
                })
            }),
        }
    };
    let caps = Capacities {
        context: cap("context_len", d.context)?,
        response: cap("response_len", d.response)?,
    };
    Ok((model, vocab, caps))
}

pub fn eval(s: &Settings) -> Result<(), CliError> {
    let mut problems = Problems::default();
    let ck = s.input_file("checkpoint", &mut problems);
    let eval_path = s.input_file("eval", &mut problems);
    let cmc_out = s.path("cmc_out");
    let exec = s.execution(&mut problems);
    problems.finish()?;

    let (model, vocab, caps) = load_checkpoint(&ck)?;
    let sets = read_eval_sets(&eval_path, &vocab, caps)?;
    let report = evaluate(&model, &sets, exec)?;
    println!("{report}");
    println!("{}", report.record());
    if let Some(p) = cmc_out {
        report.save_cmc_csv(&p)?;
    }
    Ok(())
}

pub fn rank(s: &Settings) -> Result<(), CliError> {
    let mut problems = Problems::default();
    let ck = s.input_file("checkpoint", &mut problems);
    let cand_path = s.input_file("candidates", &mut problems);
    let context = s.get("context").map(str::to_string);
    if context.is_none() {
        problems.push("missing required setting context (--context)");
    }
    problems.finish()?;

    let text = std::fs::read_to_string(&cand_path).map_err(|e| bienc_core::Error::Io {
        path: cand_path.clone(),
        source: e,
    })?;
    let lines: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    if lines.len() < 2 {
        return Err(bienc_core::Error::Empty(format!(
            "{}: need at least 2 candidates, found {}",
            cand_path.display(),
            lines.len()
        ))
        .into());
    }
    let (model, vocab, caps) = load_checkpoint(&ck)?;
    let ctx = encode_text(context.as_deref().unwrap_or_default(), &vocab, caps.context)?;
    let cands = lines
        .iter()
        .map(|l| encode_text(l, &vocab, caps.response))
        .collect::<bienc_core::Result<Vec<_>>>()?;
    let sims = score_candidates(&model, &ctx, &cands)?;
    let sign = model.config.link.rank_sign();
    let oriented: Vec<f64> = sims.iter().map(|v| sign * v).collect();
    println!("rank\tsim\tresponse");
    for (rank, &i) in rank_order(&oriented).iter().enumerate() {
        println!("{}\t{:.6}\t{}", rank + 1, sims[i], lines[i]);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SweepParam {
    CellSize,
    BatchSize,
}

impl SweepParam {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "cell_size" | "cell-size" | "hidden_size" => Some(SweepParam::CellSize),
            "batch_size" | "batch-size" => Some(SweepParam::BatchSize),
            _ => None,
        }
    }

    fn key(self) -> &'static str {
        match self {
            SweepParam::CellSize => "hidden_size",
            SweepParam::BatchSize => "batch_size",
        }
    }

    fn name(self) -> &'static str {
        match self {
            SweepParam::CellSize => "cell_size",
            SweepParam::BatchSize => "batch_size",
        }
    }
}

fn sweep_one(s: &Settings, param: SweepParam, raw: &str, base_seed: u64, data: &Data, plan: &TrainPlan) -> Result<EvalReport, CliError> {
    let value: u64 = raw
        .parse()
        .map_err(|_| CliError::Usage(format!("{} value {raw:?} is not a non-negative integer", param.name())))?;
    let mut run = s.clone();
    run.set(param.key(), raw);
    run.set("seed", mix64(base_seed ^ value).to_string());
    let mut problems = Problems::default();
    let model_cfg = run.model_config(&mut problems);
    let tc = run.train_config(&mut problems);
    problems.finish()?;

    let val = data.val.as_deref().unwrap_or_default();
    let mut model = fresh_model(plan, &model_cfg, &tc, &data.vocab)?;
    let mut quiet = Progress {
        log_every: 0,
        val: None,
        execution: tc.execution,
        quiet: true,
    };
    run_training(&mut model, &data.train, &tc, &mut quiet)?;
    Ok(evaluate(&model, val, tc.execution)?)
}

pub fn sweep(s: &Settings) -> Result<(), CliError> {
    let mut problems = Problems::default();
    let param = match s.get("param") {
        None => {
            problems.push("missing required setting param (--param cell_size|batch_size)");
            None
        }
        Some(p) => SweepParam::parse(p).or_else(|| {
            problems.push(format!("invalid param {p:?}: expected cell_size or batch_size"));
            None
        }),
    };
    let values: Vec<String> = match s.get("values") {
        None => {
            problems.push("missing required setting values (--values 32,64)");
            Vec::new()
        }
        Some(v) => v.split(',').map(|x| x.trim().to_string()).filter(|x| !x.is_empty()).collect(),
    };
    if s.get("values").is_some() && values.is_empty() {
        problems.push("values is empty");
    }
    let out = s.required_path("out", &mut problems);
    if s.get("val").is_none() {
        problems.push("missing required setting val (--val)");
    }
    // the swept key is replaced per run, so a bad base value for it is not an error
    let mut base = s.clone();
    if let Some(p) = param {
        base.set(p.key(), "1");
    }
    let plan = TrainPlan::from_settings(&base, &mut problems);
    problems.finish()?;
    let param = param.expect("validated");

    let data = load_data(&plan)?;
    let mut csv = format!("{},recall1,recall2,recall5,status\n", param.name());
    let mut failures = Vec::new();
    for raw in &values {
        match sweep_one(s, param, raw, plan.train_cfg.seed, &data, &plan) {
            Ok(r) => {
                let _ = writeln!(csv, "{raw},{},{},{},ok", r.recall_at(1), r.recall_at(2), r.recall_at(5));
                println!("{}={raw} {}", param.name(), r.record());
            }
            Err(e) => {
                let msg = e.to_string().replace(['\n', ','], " ");
                let _ = writeln!(csv, "{raw},,,,failed: {msg}");
                eprintln!("{}={raw} failed: {e}", param.name());
                failures.push(e.exit_code());
            }
        }
    }
    std::fs::write(&out, &csv).map_err(|e| bienc_core::Error::Io {
        path: out.clone(),
        source: e,
    })?;
    print!("{csv}");
    match failures.first() {
        None => Ok(()),
        Some(&code) => Err(CliError::Partial {
            failed: failures.len(),
            total: values.len(),
            code,
        }),
    }
}
