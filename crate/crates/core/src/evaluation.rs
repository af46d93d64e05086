//! Candidate ranking, Recall@k and the cumulative match characteristic.

use std::fmt;
use std::io::Write;
use std::path::Path;

use crate::corpus::{CandidateSet, EncodedSeq, NUM_CANDIDATES};
use crate::error::{Error, Result};
use crate::model::RankingModel;
use crate::par::{map_ordered, Execution};

/// Candidates ordered best-first.
#[derive(Debug, Clone, PartialEq)]
pub struct Ranking {
    pub order: Vec<usize>,
    pub scores: Vec<f64>,
    /// 1-based.
    pub rank_of_correct: usize,
}

impl Ranking {
    /// Sorts by descending score; equal scores keep ascending index order.
    pub fn from_scores(scores: Vec<f64>, correct_index: usize) -> Result<Self> {
        if correct_index >= scores.len() {
            return Err(Error::InvalidArgument(format!(
                "correct index {correct_index} out of range for {} candidates",
                scores.len()
            )));
        }
        let order = rank_order(&scores);
        let rank_of_correct = order
            .iter()
            .position(|&i| i == correct_index)
            .expect("order is a permutation")
            + 1;
        Ok(Ranking {
            order,
            scores,
            rank_of_correct,
        })
    }
}

/// Indices sorted by descending score, ties broken by ascending index.
pub fn rank_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

/// Scores every candidate against one context, encoding the context once.
/// Returns raw similarities.
pub fn score_candidates(model: &RankingModel, context: &EncodedSeq, candidates: &[EncodedSeq]) -> Result<Vec<f64>> {
    let u = model.encode_context(context)?;
    candidates
        .iter()
        .map(|c| {
            let r = model.encode_response(c)?;
            model.head.similarity(&u, &r)
        })
        .collect()
}

pub fn rank_candidates(model: &RankingModel, cs: &CandidateSet) -> Result<Ranking> {
    let sims = score_candidates(model, &cs.context, &cs.candidates)?;
    let sign = model.config.link.rank_sign();
    let oriented: Vec<f64> = sims.iter().map(|s| sign * s).collect();
    let order = rank_order(&oriented);
    let rank_of_correct = order.iter().position(|&i| i == cs.correct_index).expect("permutation") + 1;
    Ok(Ranking {
        order,
        scores: sims,
        rank_of_correct,
    })
}

pub fn recall_at_k(rankings: &[Ranking], k: usize) -> Result<f64> {
    if rankings.is_empty() {
        return Err(Error::Empty("rankings".into()));
    }
    if !(1..=NUM_CANDIDATES).contains(&k) {
        return Err(Error::InvalidArgument(format!(
            "k must be in 1..={NUM_CANDIDATES}, got {k}"
        )));
    }
    let hits = rankings.iter().filter(|r| r.rank_of_correct <= k).count();
    Ok(hits as f64 / rankings.len() as f64)
}

/// Recall@k for k = 1..=10.
pub fn cmc_curve(rankings: &[Ranking]) -> Result<Vec<f64>> {
    (1..=NUM_CANDIDATES).map(|k| recall_at_k(rankings, k)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub cmc: Vec<f64>,
    pub n_examples: usize,
}

impl EvalReport {
    pub fn from_rankings(rankings: &[Ranking]) -> Result<Self> {
        Ok(EvalReport {
            cmc: cmc_curve(rankings)?,
            n_examples: rankings.len(),
        })
    }

    pub fn recall_at(&self, k: usize) -> f64 {
        self.cmc[k - 1]
    }

    /// `n=.. recall@1=.. recall@2=.. recall@5=.. recall@10=..`
    pub fn record(&self) -> String {
        format!(
            "n={} recall@1={} recall@2={} recall@5={} recall@10={}",
            self.n_examples,
            self.recall_at(1),
            self.recall_at(2),
            self.recall_at(5),
            self.recall_at(10)
        )
    }

    pub fn write_cmc_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "k,recall")?;
        for (i, r) in self.cmc.iter().enumerate() {
            writeln!(w, "{},{}", i + 1, r)?;
        }
        Ok(())
    }

    pub fn save_cmc_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        self.write_cmc_csv(&mut buf).expect("write to Vec");
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:>10} {:>10} {:>10} {:>10}", "examples", "Recall@1", "Recall@2", "Recall@5")?;
        write!(
            f,
            "{:>10} {:>10.2} {:>10.2} {:>10.2}",
            self.n_examples,
            100.0 * self.recall_at(1),
            100.0 * self.recall_at(2),
            100.0 * self.recall_at(5)
        )
    }
}

pub fn rank_all(model: &RankingModel, sets: &[CandidateSet], exec: Execution) -> Result<Vec<Ranking>> {
    map_ordered(sets, exec, |cs| rank_candidates(model, cs))
        .into_iter()
        .collect()
}

pub fn evaluate(model: &RankingModel, sets: &[CandidateSet], exec: Execution) -> Result<EvalReport> {
    if sets.is_empty() {
        return Err(Error::Empty("evaluation set".into()));
    }
    EvalReport::from_rankings(&rank_all(model, sets, exec)?)
}
