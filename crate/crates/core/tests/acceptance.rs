//! Acceptance criteria, one test per criterion.
//!
//! Each test prints a single `[PASS]`, `[FAIL]` or `[SKIP]` line with the
//! measured value next to its threshold before asserting, so
//! `cargo test --test acceptance -- --nocapture --test-threads=1` reads as a
//! report. Criteria 7 and 8 need the real corpus: point `UDC_DIR` at a
//! directory holding `train.csv`, `valid.csv` and `test.csv`.

use std::path::PathBuf;
use std::time::Instant;

use bienc_core::checkpoint::Checkpoint;
use bienc_core::corpus::{
    load_eval_set, load_train_set, read_eval_sets, write_eval_csv, Capacities, CandidateSet, DialogExample,
    EncodedSeq, EvalRecord, TrainRecord, Vocabulary, NUM_CANDIDATES, PAD,
};
use bienc_core::embedding::EmbeddingTable;
use bienc_core::encoder::{self, pool_final, pool_weighted, EncoderStack, Pooling};
use bienc_core::evaluation::{cmc_curve, evaluate, recall_at_k, Ranking};
use bienc_core::gradcheck::{gradient_check, GradCheckOptions};
use bienc_core::model::{Architecture, ModelConfig, RankingModel};
use bienc_core::numkit::{Matrix, Rng};
use bienc_core::par::Execution;
use bienc_core::scoring::{sim_bilinear, sim_cosine, sim_dot, sim_polynomial, HeadKind};
use bienc_core::synth::{memorization_pairs, memorization_task, TopicCorpus};
use bienc_core::train::{mean_loss, train, TrainConfig, TrainStats};

fn report(id: &str, name: &str, pass: bool, detail: impl AsRef<str>) {
    let tag = if pass { "PASS" } else { "FAIL" };
    println!("[{tag}] {id} {name}: {}", detail.as_ref());
}

fn skip(id: &str, name: &str, why: &str) {
    println!("[SKIP] {id} {name}: {why}");
}

fn corpus_dir() -> Option<PathBuf> {
    let dir = PathBuf::from(std::env::var_os("UDC_DIR")?);
    dir.is_dir().then_some(dir)
}

fn seq(ids: &[u32], cap: usize) -> EncodedSeq {
    let mut v = ids.to_vec();
    v.resize(cap, PAD);
    EncodedSeq::new(v, ids.len()).unwrap()
}

fn model_for(cfg: ModelConfig, vocab: usize, rng: &mut Rng) -> RankingModel {
    let emb = EmbeddingTable::init_random(vocab, cfg.embed_dim, rng).unwrap();
    RankingModel::new(cfg, emb, rng).unwrap()
}

// ---------------------------------------------------------------------------
// 1. Gradient correctness
// ---------------------------------------------------------------------------

#[test]
fn c1_gradient_correctness() {
    let start = Instant::now();
    let mut combos = Vec::new();
    for head in [HeadKind::Dot, HeadKind::Cosine, HeadKind::Polynomial, HeadKind::Bilinear] {
        combos.push((Architecture::BiEncoder, head));
    }
    combos.push((Architecture::DualEncoder, HeadKind::Bilinear));

    let mut worst = 0.0f64;
    let mut worst_at = String::new();
    let mut runs = 0;
    let (mut checked, mut above) = (0, 0);
    let mut rng = Rng::new(2024);
    for (arch, head) in combos {
        for pooling in [Pooling::Final, Pooling::Weighted] {
            for depth in [1, 3] {
                let cfg = ModelConfig {
                    arch,
                    head,
                    pooling,
                    depth,
                    embed_dim: 4,
                    hidden_size: 5,
                    ..ModelConfig::default()
                };
                let mut model = model_for(cfg, 12, &mut rng);
                model.bias = 0.1;
                for label in [0u8, 1] {
                    let clen = 1 + rng.below(6);
                    let rlen = 1 + rng.below(6);
                    let c: Vec<u32> = (0..clen).map(|_| 1 + rng.below(11) as u32).collect();
                    let r: Vec<u32> = (0..rlen).map(|_| 1 + rng.below(11) as u32).collect();
                    let ex = DialogExample {
                        context: seq(&c, 6),
                        response: seq(&r, 6),
                        label,
                    };
                    let rep = gradient_check(&mut model, &ex, GradCheckOptions::default()).unwrap();
                    runs += 1;
                    checked += rep.checked();
                    above += rep.above_floor();
                    if rep.max_rel_err > worst || worst_at.is_empty() {
                        worst = worst.max(rep.max_rel_err);
                        worst_at = format!(
                            "{}/{}/{}/L{depth}/label{label} at {:?}",
                            arch.name(),
                            head.name(),
                            pooling.name(),
                            rep.worst
                        );
                    }
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    // the floor must not be doing all the work
    let meaningful = above * 4 > checked;
    let pass = worst < 1e-4 && secs < 60.0 && meaningful;
    report(
        "C1",
        "gradient correctness",
        pass,
        format!(
            "{runs} configs, {checked} entries ({above} with |g| > 1e-6), max rel err {worst:.3e} (< 1e-4), worst {worst_at}, {secs:.1}s (< 60s)"
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 2 & 5. Overfit smoke test and determinism
// ---------------------------------------------------------------------------

struct OverfitRun {
    stats: TrainStats,
    final_loss: f64,
    recall1: f64,
    checkpoint: Vec<u8>,
}

fn overfit_run(seed: u64) -> OverfitRun {
    let mut data_rng = Rng::new(7);
    let pairs = memorization_pairs(64, 4, &mut data_rng);
    let (rows, set_rows) = memorization_task(&pairs, 16, &mut data_rng);
    let vocab = Vocabulary::build(rows.iter().flat_map(|r| [&r.context, &r.response]), 1).unwrap();
    let caps = Capacities { context: 12, response: 8 };
    let data: Vec<DialogExample> = rows.iter().map(|r| DialogExample::encode(r, &vocab, caps).unwrap()).collect();
    let sets: Vec<CandidateSet> = set_rows
        .iter()
        .map(|r| CandidateSet::encode(r, &vocab, caps).unwrap())
        .collect();

    let tc = TrainConfig {
        learning_rate: 1e-3,
        batch_size: 16,
        epochs: 1000,
        max_steps: Some(500),
        seed,
        execution: Execution::Sequential,
        ..TrainConfig::default()
    };
    let cfg = ModelConfig {
        embed_dim: 64,
        hidden_size: 32,
        ..ModelConfig::default()
    };
    let mut init = Rng::new(tc.init_seed());
    let mut model = model_for(cfg, vocab.len(), &mut init);
    let stats = train(&mut model, &data, &tc, &mut ()).unwrap();
    let final_loss = mean_loss(&model, &data, Execution::Sequential).unwrap();
    let recall1 = evaluate(&model, &sets, Execution::Sequential).unwrap().recall_at(1);
    let mut extra = std::collections::BTreeMap::new();
    extra.insert("seed".to_string(), seed.to_string());
    let checkpoint = Checkpoint::from_model(&model, &vocab, &extra).to_bytes();
    OverfitRun {
        stats,
        final_loss,
        recall1,
        checkpoint,
    }
}

#[test]
fn c2_overfit_smoke() {
    let start = Instant::now();
    let run = overfit_run(42);
    let secs = start.elapsed().as_secs_f64();
    let epoch_loss = run.stats.final_epoch_loss().unwrap();
    let pass = run.final_loss < 0.05 && run.recall1 == 1.0 && run.stats.step_losses.len() <= 500 && secs < 300.0;
    report(
        "C2",
        "overfit smoke test",
        pass,
        format!(
            "{} steps, mean loss {:.4} (< 0.05, last-epoch batch mean {:.4}), Recall@1 {} (= 1.0), {secs:.1}s",
            run.stats.step_losses.len(),
            run.final_loss,
            epoch_loss,
            run.recall1
        ),
    );
    assert!(pass);
}

#[test]
fn c5_determinism() {
    let a = overfit_run(42);
    let b = overfit_run(42);
    let same_ck = a.checkpoint == b.checkpoint;
    let same_losses = a.stats.step_losses.len() == b.stats.step_losses.len()
        && a.stats
            .step_losses
            .iter()
            .zip(&b.stats.step_losses)
            .all(|(x, y)| x.to_bits() == y.to_bits());
    let c = overfit_run(43);
    let seed_matters = c.checkpoint != a.checkpoint;
    let pass = same_ck && same_losses && seed_matters;
    report(
        "C5",
        "determinism",
        pass,
        format!(
            "checkpoint bytes identical: {same_ck} ({} bytes), step losses identical: {same_losses}, different seed differs: {seed_matters}",
            a.checkpoint.len()
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 3. Similarity oracle equivalence
// ---------------------------------------------------------------------------

fn oracle_dot(u: &[f64], r: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..u.len() {
        s += u[i] * r[i];
    }
    s
}

fn oracle_cosine(u: &[f64], r: &[f64]) -> f64 {
    let (mut uu, mut rr) = (0.0, 0.0);
    for i in 0..u.len() {
        uu += u[i] * u[i];
        rr += r[i] * r[i];
    }
    if uu.sqrt() < 1e-12 || rr.sqrt() < 1e-12 {
        return 0.0;
    }
    oracle_dot(u, r) / (uu.sqrt() * rr.sqrt())
}

fn oracle_poly(u: &[f64], r: &[f64]) -> f64 {
    let x = oracle_dot(u, r);
    let mut total = 0.0;
    for d in 0..=3 {
        let mut term = 1.0;
        for _ in 0..d {
            term *= x;
        }
        total += term;
    }
    total
}

fn oracle_bilinear(u: &[f64], m: &[Vec<f64>], r: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..r.len() {
        for j in 0..u.len() {
            s += r[i] * m[i][j] * u[j];
        }
    }
    s
}

#[test]
fn c3_similarity_oracles() {
    let mut rng = Rng::new(99);
    let mut worst = 0.0f64;
    let close = |a: f64, b: f64| (a - b).abs() / b.abs().max(1.0);
    for _ in 0..1000 {
        let d = 1 + rng.below(16);
        let u = rng.uniform(-1.0, 1.0, d).unwrap();
        let r = rng.uniform(-1.0, 1.0, d).unwrap();
        let rows: Vec<Vec<f64>> = (0..d).map(|_| rng.uniform(-1.0, 1.0, d).unwrap()).collect();
        let m = Matrix::from_rows(&rows).unwrap();
        worst = worst
            .max(close(sim_dot(&u, &r).unwrap(), oracle_dot(&u, &r)))
            .max(close(sim_cosine(&u, &r).unwrap(), oracle_cosine(&u, &r)))
            .max(close(sim_polynomial(&u, &r).unwrap(), oracle_poly(&u, &r)))
            .max(close(sim_bilinear(&u, &m, &r).unwrap(), oracle_bilinear(&u, &rows, &r)));
    }

    let mut forced = Vec::new();
    let v = [0.3, -1.2, 2.0];
    let w = [0.6, -2.4, 4.0];
    forced.push(("cosine(parallel)=1", (sim_cosine(&v, &w).unwrap() - 1.0).abs() < 1e-12));
    for (x, want) in [(0.0, 1.0), (1.0, 4.0), (2.0, 15.0)] {
        let got = sim_polynomial(&[x], &[1.0]).unwrap();
        forced.push(("polynomial", (got - want).abs() < 1e-12));
    }
    let eye = Matrix::identity(3);
    forced.push((
        "bilinear(I)=dot",
        (sim_bilinear(&v, &eye, &w).unwrap() - sim_dot(&v, &w).unwrap()).abs() < 1e-12,
    ));
    let forced_ok = forced.iter().all(|f| f.1);
    let pass = worst < 1e-12 && forced_ok;
    report(
        "C3",
        "similarity oracle equivalence",
        pass,
        format!("1000 pairs, max rel err {worst:.2e} (< 1e-12), forced values ok: {forced_ok}"),
    );
    assert!(pass, "{forced:?}");
}

// ---------------------------------------------------------------------------
// 4. Metric properties
// ---------------------------------------------------------------------------

fn fixture_rows(n: usize, rng: &mut Rng) -> Vec<EvalRecord> {
    TopicCorpus::default().eval_rows(n, rng)
}

#[test]
fn c4_metric_properties() {
    let mut rng = Rng::new(4);
    let rankings: Vec<Ranking> = (0..1000)
        .map(|_| {
            let scores = rng.uniform(-1.0, 1.0, NUM_CANDIDATES).unwrap();
            Ranking::from_scores(scores, rng.below(NUM_CANDIDATES)).unwrap()
        })
        .collect();
    let cmc = cmc_curve(&rankings).unwrap();
    let monotone = cmc.windows(2).all(|w| w[0] <= w[1]);
    let r10_exact = recall_at_k(&rankings, 10).unwrap() == 1.0;
    let pointwise = (1..=10).all(|k| cmc[k - 1] == recall_at_k(&rankings, k).unwrap());

    // untrained model on fixture sets in the corpus CSV format
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("valid.csv");
    let rows = fixture_rows(1000, &mut Rng::new(11));
    write_eval_csv(&path, &rows).unwrap();
    let vocab = Vocabulary::build(rows.iter().flat_map(|r| std::iter::once(&r.context).chain(&r.candidates)), 1).unwrap();
    let sets = read_eval_sets(&path, &vocab, Capacities::default()).unwrap();
    let cfg = ModelConfig {
        embed_dim: 16,
        hidden_size: 16,
        ..ModelConfig::default()
    };
    let model = model_for(cfg, vocab.len(), &mut Rng::new(5));
    let r1 = evaluate(&model, &sets, Execution::Parallel).unwrap().recall_at(1);
    let in_band = (0.07..=0.13).contains(&r1);

    let pass = monotone && r10_exact && pointwise && in_band && sets.len() == 1000;
    report(
        "C4",
        "metric properties",
        pass,
        format!(
            "nondecreasing {monotone}, Recall@10=1 {r10_exact}, CMC=recall_at_k {pointwise}, untrained Recall@1 {r1:.3} on {} sets (in [0.07, 0.13])",
            sets.len()
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 6. Pooling equivalence and exact masking
// ---------------------------------------------------------------------------

#[test]
fn c6_pooling_and_masking() {
    let mut rng = Rng::new(6);
    let mut pooling_exact = true;
    for depth in [1, 2, 3] {
        let stack = EncoderStack::init(4, 5, depth, &mut rng).unwrap();
        for cap in [1, 4] {
            let mut x = vec![rng.uniform(-1.0, 1.0, 4).unwrap()];
            x.resize(cap, vec![0.0; 4]);
            let out = encoder::encode_sequence(&stack, &x, 1).unwrap();
            pooling_exact &= pool_weighted(&out, 1) == pool_final(&out);
        }
    }

    let mut masking_exact = true;
    let mut checked = 0;
    let combos = [
        (Architecture::BiEncoder, HeadKind::Dot),
        (Architecture::BiEncoder, HeadKind::Cosine),
        (Architecture::BiEncoder, HeadKind::Polynomial),
        (Architecture::BiEncoder, HeadKind::Bilinear),
        (Architecture::DualEncoder, HeadKind::Bilinear),
    ];
    for (arch, head) in combos {
        for pooling in [Pooling::Final, Pooling::Weighted] {
            for depth in [1, 3] {
                let cfg = ModelConfig {
                    arch,
                    head,
                    pooling,
                    depth,
                    embed_dim: 4,
                    hidden_size: 5,
                    ..ModelConfig::default()
                };
                let model = model_for(cfg, 12, &mut rng);
                for _ in 0..5 {
                    let c: Vec<u32> = (0..1 + rng.below(6)).map(|_| 1 + rng.below(11) as u32).collect();
                    let r: Vec<u32> = (0..1 + rng.below(6)).map(|_| 1 + rng.below(11) as u32).collect();
                    let base = model.score(&seq(&c, 6), &seq(&r, 6)).unwrap();
                    for extra in [1, 7, 40] {
                        let padded = model.score(&seq(&c, 6 + extra), &seq(&r, 6 + extra)).unwrap();
                        masking_exact &= padded.sim.to_bits() == base.sim.to_bits()
                            && padded.p.to_bits() == base.p.to_bits();
                        checked += 1;
                    }
                }
            }
        }
    }
    let pass = pooling_exact && masking_exact;
    report(
        "C6",
        "pooling equivalence and exact masking",
        pass,
        format!("weighted=final at T=1 exact: {pooling_exact}, {checked} PAD extensions bit-identical: {masking_exact}"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 7. Desk-scale training beats the random baseline
// ---------------------------------------------------------------------------

fn beats_random(train_rows: &[TrainRecord], eval_rows: &[EvalRecord], min_count: usize) -> (f64, f64) {
    let vocab = Vocabulary::build(train_rows.iter().flat_map(|r| [&r.context, &r.response]), min_count).unwrap();
    let caps = Capacities::default();
    let data: Vec<DialogExample> = train_rows
        .iter()
        .filter_map(|r| DialogExample::encode(r, &vocab, caps).ok())
        .collect();
    let sets: Vec<CandidateSet> = eval_rows
        .iter()
        .filter_map(|r| CandidateSet::encode(r, &vocab, caps).ok())
        .collect();
    let tc = TrainConfig {
        batch_size: 16,
        epochs: 2,
        seed: 7,
        ..TrainConfig::default()
    };
    let cfg = ModelConfig {
        embed_dim: 64,
        hidden_size: 64,
        ..ModelConfig::default()
    };
    let mut model = model_for(cfg, vocab.len(), &mut Rng::new(tc.init_seed()));
    let before = evaluate(&model, &sets, Execution::Parallel).unwrap().recall_at(1);
    train(&mut model, &data, &tc, &mut ()).unwrap();
    let after = evaluate(&model, &sets, Execution::Parallel).unwrap().recall_at(1);
    (before, after)
}

#[test]
fn c7_desk_scale_training() {
    let name = "2k-pair training beats random (Recall@1 > 0.15)";
    match corpus_dir() {
        Some(dir) => {
            let start = Instant::now();
            let train_rows: Vec<TrainRecord> = load_train_set(dir.join("train.csv"))
                .unwrap()
                .take(2000)
                .collect::<Result<_, _>>()
                .unwrap();
            let eval_rows: Vec<EvalRecord> = load_eval_set(dir.join("valid.csv"))
                .unwrap()
                .take(500)
                .collect::<Result<_, _>>()
                .unwrap();
            let (before, after) = beats_random(&train_rows, &eval_rows, 1);
            let secs = start.elapsed().as_secs_f64();
            let pass = after > 0.15;
            report(
                "C7",
                name,
                pass,
                format!("real corpus: Recall@1 {before:.3} -> {after:.3} on {} sets, {secs:.0}s", eval_rows.len()),
            );
            assert!(pass);
        }
        None => {
            skip("C7", name, "UDC_DIR not set; real-corpus run skipped");
            let mut rng = Rng::new(77);
            let tc = TopicCorpus {
                topics: 20,
                topic_rate: 0.8,
                ..TopicCorpus::default()
            };
            let train_rows = tc.train_rows(2000, &mut rng);
            let eval_rows = tc.eval_rows(500, &mut rng);
            let (before, after) = beats_random(&train_rows, &eval_rows, 1);
            let pass = after > 0.15;
            report(
                "C7",
                "surrogate (synthetic corpus-format data)",
                pass,
                format!("Recall@1 {before:.3} -> {after:.3} on 500 sets (> 0.15)"),
            );
            assert!(pass);
        }
    }
}

// ---------------------------------------------------------------------------
// 8. Format fidelity on the real corpus
// ---------------------------------------------------------------------------

#[test]
fn c8_format_fidelity() {
    let name = "real corpus counts";
    let Some(dir) = corpus_dir() else {
        skip("C8", name, "UDC_DIR not set; needs train.csv, valid.csv and test.csv");
        return;
    };
    let valid = load_eval_set(dir.join("valid.csv")).unwrap().count();
    let test = load_eval_set(dir.join("test.csv")).unwrap().count();
    let vocab = Vocabulary::build_from_train_csv(dir.join("train.csv"), 5).unwrap();
    let pass = valid == 19_560 && test == 18_920 && vocab.num_regular() == 91_620;
    report(
        "C8",
        name,
        pass,
        format!(
            "valid {valid} (19560), test {test} (18920), vocab@5 {} (91620)",
            vocab.num_regular()
        ),
    );
    assert!(pass);
}
