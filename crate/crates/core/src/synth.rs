//! Synthetic corpora for smoke tests, benches and fixtures.
//!
//! Everything is generated from a seeded [`Rng`] and written in the same
//! textual form the real corpus uses (`__eou__` / `__eot__` markers), so it
//! exercises the full load → vocabulary → encode path.

use crate::corpus::{EvalRecord, TrainRecord, EOT_TOKEN, EOU_TOKEN, NUM_CANDIDATES};
use crate::numkit::Rng;

fn word(prefix: &str, i: usize) -> String {
    format!("{prefix}{i}")
}

fn utterances(words: &[String]) -> String {
    let mut out = Vec::with_capacity(words.len() + 4);
    for (i, w) in words.iter().enumerate() {
        out.push(w.clone());
        if i % 4 == 3 && i + 1 < words.len() {
            out.push(EOU_TOKEN.to_string());
            out.push(EOT_TOKEN.to_string());
        }
    }
    out.push(EOU_TOKEN.to_string());
    out.join(" ")
}

/// A derangement of `0..n` (no fixed points), `n >= 2`.
pub fn derangement(n: usize, rng: &mut Rng) -> Vec<usize> {
    assert!(n >= 2, "derangement needs n >= 2");
    loop {
        let mut p: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut p);
        if p.iter().enumerate().all(|(i, &j)| i != j) {
            return p;
        }
    }
}

/// Memorization task: `n_pairs` context/response pairs. Pair `i` draws all
/// its words from a private block of `block` tokens, so pairs have disjoint
/// token patterns. Returns the pair texts as `(context, response)`.
pub fn memorization_pairs(n_pairs: usize, block: usize, rng: &mut Rng) -> Vec<(String, String)> {
    (0..n_pairs)
        .map(|i| {
            let prefix = format!("p{i}_");
            let clen = 4 + rng.below(5);
            let rlen = 2 + rng.below(4);
            let c: Vec<String> = (0..clen).map(|_| word(&prefix, rng.below(block))).collect();
            let r: Vec<String> = (0..rlen).map(|_| word(&prefix, rng.below(block))).collect();
            (c.join(" "), r.join(" "))
        })
        .collect()
}

/// Training rows and candidate sets for the memorization task.
///
/// Every pair is a positive row. Each of the first `n_sets` contexts also
/// gets a candidate set of its true response plus nine other pairs'
/// responses, and those nine mismatches are its negative rows, so the sets
/// only contain pairings the model has seen. The remaining contexts get one
/// negative each, taken from a derangement.
pub fn memorization_task(
    pairs: &[(String, String)],
    n_sets: usize,
    rng: &mut Rng,
) -> (Vec<TrainRecord>, Vec<EvalRecord>) {
    assert!(pairs.len() >= NUM_CANDIDATES, "need at least {NUM_CANDIDATES} pairs");
    let perm = derangement(pairs.len(), rng);
    let mut rows = Vec::new();
    let mut sets = Vec::new();
    let row = |c: &str, r: &str, label: u8| TrainRecord {
        line: 0,
        context: c.to_string(),
        response: r.to_string(),
        label,
    };
    for (i, (c, r)) in pairs.iter().enumerate() {
        rows.push(row(c, r, 1));
        if i < n_sets {
            let mut cands = vec![r.clone()];
            while cands.len() < NUM_CANDIDATES {
                let j = rng.below(pairs.len());
                if j != i && !cands.contains(&pairs[j].1) {
                    cands.push(pairs[j].1.clone());
                }
            }
            for neg in &cands[1..] {
                rows.push(row(c, neg, 0));
            }
            sets.push(EvalRecord {
                line: sets.len() as u64 + 2,
                context: c.clone(),
                candidates: cands,
            });
        } else {
            rows.push(row(c, &pairs[perm[i]].1, 0));
        }
    }
    for (i, r) in rows.iter_mut().enumerate() {
        r.line = i as u64 + 2;
    }
    (rows, sets)
}

/// Topic-structured corpus in the real corpus' row format.
///
/// Each dialog picks a topic; context and true response draw most of their
/// words from that topic's vocabulary plus shared filler, so a trained model
/// can beat chance while an untrained one cannot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TopicCorpus {
    pub topics: usize,
    pub words_per_topic: usize,
    pub filler_words: usize,
    /// Probability that a word comes from the topic rather than filler.
    pub topic_rate: f64,
}

impl Default for TopicCorpus {
    fn default() -> Self {
        TopicCorpus {
            topics: 40,
            words_per_topic: 12,
            filler_words: 200,
            topic_rate: 0.5,
        }
    }
}

impl TopicCorpus {
    fn text(&self, topic: usize, len: usize, rng: &mut Rng) -> String {
        let words: Vec<String> = (0..len)
            .map(|_| {
                if rng.next_f64() < self.topic_rate {
                    word(&format!("t{topic}_"), rng.below(self.words_per_topic))
                } else {
                    word("f", rng.below(self.filler_words))
                }
            })
            .collect();
        utterances(&words)
    }

    fn context(&self, topic: usize, rng: &mut Rng) -> String {
        let len = 8 + rng.below(17);
        self.text(topic, len, rng)
    }

    fn response(&self, topic: usize, rng: &mut Rng) -> String {
        let len = 3 + rng.below(8);
        self.text(topic, len, rng)
    }

    /// Training rows, alternating positive and negative labels.
    pub fn train_rows(&self, n: usize, rng: &mut Rng) -> Vec<TrainRecord> {
        (0..n)
            .map(|i| {
                let topic = rng.below(self.topics);
                let context = self.context(topic, rng);
                let label = (i % 2 == 0) as u8;
                let rtopic = if label == 1 {
                    topic
                } else {
                    (topic + 1 + rng.below(self.topics - 1)) % self.topics
                };
                TrainRecord {
                    line: i as u64 + 2,
                    context,
                    response: self.response(rtopic, rng),
                    label,
                }
            })
            .collect()
    }

    /// Evaluation rows: ground truth first, distractors from random topics.
    pub fn eval_rows(&self, n: usize, rng: &mut Rng) -> Vec<EvalRecord> {
        (0..n)
            .map(|i| {
                let topic = rng.below(self.topics);
                let context = self.context(topic, rng);
                let mut candidates = vec![self.response(topic, rng)];
                for _ in 1..NUM_CANDIDATES {
                    let t = (topic + 1 + rng.below(self.topics - 1)) % self.topics;
                    candidates.push(self.response(t, rng));
                }
                EvalRecord {
                    line: i as u64 + 2,
                    context,
                    candidates,
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derangement_has_no_fixed_points() {
        let mut rng = Rng::new(5);
        for n in 2..20 {
            let p = derangement(n, &mut rng);
            let mut s = p.clone();
            s.sort_unstable();
            assert_eq!(s, (0..n).collect::<Vec<_>>());
            assert!(p.iter().enumerate().all(|(i, &j)| i != j));
        }
    }

    #[test]
    fn memorization_shapes() {
        let mut rng = Rng::new(1);
        let pairs = memorization_pairs(64, 4, &mut rng);
        assert_eq!(pairs.len(), 64);
        let (rows, sets) = memorization_task(&pairs, 16, &mut rng);
        assert_eq!(rows.iter().filter(|r| r.label == 1).count(), 64);
        assert_eq!(rows.len(), 64 + 16 * 9 + 48);
        assert_eq!(sets.len(), 16);
        for (i, s) in sets.iter().enumerate() {
            assert_eq!(s.candidates.len(), NUM_CANDIDATES);
            assert_eq!(s.candidates[0], pairs[i].1);
            assert_eq!(s.context, pairs[i].0);
            for neg in &s.candidates[1..] {
                assert!(rows.iter().any(|r| r.context == s.context && &r.response == neg && r.label == 0));
            }
        }
        // private blocks: no token shared between pairs
        assert!(!pairs[0].0.split(' ').any(|w| pairs[1].0.split(' ').any(|v| v == w)));
    }

    #[test]
    fn topic_corpus_is_deterministic() {
        let tc = TopicCorpus::default();
        let a = tc.train_rows(10, &mut Rng::new(3));
        let b = tc.train_rows(10, &mut Rng::new(3));
        assert_eq!(a, b);
        assert!(a[0].context.ends_with(EOU_TOKEN));
        let e = tc.eval_rows(3, &mut Rng::new(3));
        assert!(e.iter().all(|r| r.candidates.len() == NUM_CANDIDATES));
    }
}
