//! Token embedding table: random init, pretrained text loading, lookup and
//! sparse row gradients.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::corpus::{EncodedSeq, Vocabulary, NUM_SPECIAL, PAD};
use crate::error::{check_dims, Error, Result};
use crate::numkit::{Matrix, Rng};

pub const INIT_SCALE: f64 = 0.25;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub weights: Matrix,
    pub trainable: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CoverageReport {
    pub found: usize,
    pub missing: usize,
    pub total: usize,
}

impl EmbeddingTable {
    /// Uniform `[-0.25, 0.25)` rows, PAD row zeroed.
    pub fn init_random(vocab_size: usize, dim: usize, rng: &mut Rng) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("embedding dim must be >= 1".into()));
        }
        let mut weights = Matrix::random_uniform(vocab_size, dim, -INIT_SCALE, INIT_SCALE, rng)?;
        if vocab_size > 0 {
            weights.row_mut(PAD as usize).fill(0.0);
        }
        Ok(EmbeddingTable {
            weights,
            trainable: true,
        })
    }

    /// Reads `token v1 .. v_dim` lines. Tokens outside the vocabulary are
    /// skipped as they stream past; vocabulary tokens absent from the file keep
    /// their random row. A leading `count dim` header line is tolerated.
    pub fn load_pretrained(
        path: impl AsRef<Path>,
        vocab: &Vocabulary,
        dim: usize,
        rng: &mut Rng,
    ) -> Result<(Self, CoverageReport)> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_pretrained(BufReader::new(file), path, vocab, dim, rng)
    }

    pub fn read_pretrained(
        reader: impl BufRead,
        origin: &Path,
        vocab: &Vocabulary,
        dim: usize,
        rng: &mut Rng,
    ) -> Result<(Self, CoverageReport)> {
        let mut table = Self::init_random(vocab.len(), dim, rng)?;
        let mut seen = vec![false; vocab.len()];
        for (n, line) in reader.lines().enumerate() {
            let lineno = n as u64 + 1;
            let line = line.map_err(|e| Error::io(origin, e))?;
            let mut fields = line.split(' ').filter(|f| !f.is_empty());
            let Some(token) = fields.next() else { continue };
            let values: Vec<&str> = fields.collect();
            if lineno == 1
                && values.len() == 1
                && token.parse::<u64>().is_ok()
                && values[0].parse::<usize>().ok() == Some(dim)
            {
                continue;
            }
            if values.len() != dim {
                return Err(Error::parse(
                    origin,
                    lineno,
                    format!("expected {dim} values for {token:?}, found {}", values.len()),
                ));
            }
            let Some(id) = vocab.id(token) else { continue };
            let id = id as usize;
            if id < NUM_SPECIAL || seen[id] {
                continue;
            }
            let row = table.weights.row_mut(id);
            for (dst, v) in row.iter_mut().zip(&values) {
                *dst = v
                    .parse()
                    .map_err(|_| Error::parse(origin, lineno, format!("bad float {v:?}")))?;
            }
            seen[id] = true;
        }
        let found = seen.iter().filter(|&&s| s).count();
        let regular = vocab.len().saturating_sub(NUM_SPECIAL);
        let report = CoverageReport {
            found,
            missing: regular - found,
            total: vocab.len(),
        };
        Ok((table, report))
    }

    pub fn vocab_size(&self) -> usize {
        self.weights.rows()
    }

    pub fn dim(&self) -> usize {
        self.weights.cols()
    }

    /// One vector per position (all `capacity` of them); PAD rows are zero.
    pub fn lookup(&self, seq: &EncodedSeq) -> Result<Vec<Vec<f64>>> {
        seq.ids()
            .iter()
            .map(|&id| {
                let id = id as usize;
                if id >= self.vocab_size() {
                    return Err(Error::InvalidArgument(format!(
                        "token id {id} out of range for vocabulary of {}",
                        self.vocab_size()
                    )));
                }
                Ok(self.weights.row(id).to_vec())
            })
            .collect()
    }
}

/// Sparse per-row gradient of an embedding table.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmbeddingGrad {
    dim: usize,
    rows: BTreeMap<u32, Vec<f64>>,
}

impl EmbeddingGrad {
    pub fn new(dim: usize) -> Self {
        EmbeddingGrad {
            dim,
            rows: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, id: u32) -> Option<&[f64]> {
        self.rows.get(&id).map(Vec::as_slice)
    }

    pub fn rows(&self) -> impl Iterator<Item = (u32, &[f64])> {
        self.rows.iter().map(|(&k, v)| (k, v.as_slice()))
    }

    pub fn is_zero(&self) -> bool {
        self.rows.values().all(|r| r.iter().all(|&v| v == 0.0))
    }

    /// Adds `upstream[t]` into the row of `seq.ids()[t]` for every position
    /// holding a real token. PAD positions are skipped so the PAD row never
    /// receives gradient.
    pub fn accumulate(&mut self, seq: &EncodedSeq, upstream: &[Vec<f64>]) -> Result<()> {
        if upstream.len() > seq.capacity() {
            return Err(Error::DimMismatch {
                op: "embed_grad_accumulate positions",
                left: seq.capacity(),
                right: upstream.len(),
            });
        }
        for (&id, g) in seq.ids().iter().zip(upstream) {
            check_dims("embed_grad_accumulate width", self.dim, g.len())?;
            if id == PAD {
                continue;
            }
            let row = self.rows.entry(id).or_insert_with(|| vec![0.0; self.dim]);
            for (dst, v) in row.iter_mut().zip(g) {
                *dst += v;
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &EmbeddingGrad) {
        for (&id, g) in &other.rows {
            let row = self.rows.entry(id).or_insert_with(|| vec![0.0; self.dim]);
            for (dst, v) in row.iter_mut().zip(g) {
                *dst += v;
            }
        }
    }

    /// `dense += alpha * self`
    pub fn add_to_dense(&self, dense: &mut Matrix, alpha: f64) -> Result<()> {
        check_dims("EmbeddingGrad::add_to_dense", dense.cols(), self.dim)?;
        for (&id, g) in &self.rows {
            let row = dense.row_mut(id as usize);
            for (dst, v) in row.iter_mut().zip(g) {
                *dst += alpha * v;
            }
        }
        Ok(())
    }
}

/// Functional form of [`EmbeddingGrad::accumulate`].
pub fn embed_grad_accumulate(
    mut table_grad: EmbeddingGrad,
    seq: &EncodedSeq,
    upstream: &[Vec<f64>],
) -> Result<EmbeddingGrad> {
    table_grad.accumulate(seq, upstream)?;
    Ok(table_grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{encode, UNK};

    fn vocab(words: &str) -> Vocabulary {
        Vocabulary::build([words], 1).unwrap()
    }

    #[test]
    fn init_random_shape_and_pad() {
        let t = EmbeddingTable::init_random(4, 3, &mut Rng::new(1)).unwrap();
        assert_eq!((t.vocab_size(), t.dim()), (4, 3));
        assert_eq!(t.weights.row(0), &[0.0, 0.0, 0.0]);
        assert!(t.weights.row(1).iter().any(|&v| v != 0.0));
        assert!(EmbeddingTable::init_random(4, 0, &mut Rng::new(1)).is_err());
    }

    #[test]
    fn init_random_deterministic_and_bounded() {
        let a = EmbeddingTable::init_random(100, 100, &mut Rng::new(9)).unwrap();
        let b = EmbeddingTable::init_random(100, 100, &mut Rng::new(9)).unwrap();
        assert_eq!(a, b);
        let max = a.weights.as_slice().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max <= INIT_SCALE);
        assert!(max > 0.2);
    }

    #[test]
    fn pretrained_found_and_missing() {
        let v = vocab("hello xyz");
        let (t, cov) = EmbeddingTable::read_pretrained(
            "hello 0.1 0.2\nother 1 2\n".as_bytes(),
            Path::new("emb.txt"),
            &v,
            2,
            &mut Rng::new(3),
        )
        .unwrap();
        let hello = v.id("hello").unwrap();
        assert_eq!(t.weights.row(hello as usize), &[0.1, 0.2]);
        let xyz = v.id("xyz").unwrap() as usize;
        assert!(t.weights.row(xyz).iter().all(|x| x.abs() <= INIT_SCALE));
        assert_eq!(cov, CoverageReport { found: 1, missing: 1, total: v.len() });
        assert_eq!(cov.found + cov.missing, cov.total - NUM_SPECIAL);
        assert_eq!(t.weights.row(0), &[0.0, 0.0]);
    }

    #[test]
    fn pretrained_width_error_names_line() {
        let v = vocab("bad good");
        let err = EmbeddingTable::read_pretrained(
            "good 0.5 0.5\nbad 0.1\n".as_bytes(),
            Path::new("emb.txt"),
            &v,
            2,
            &mut Rng::new(3),
        )
        .unwrap_err()
        .to_string();
        assert!(err.contains("emb.txt:2") && err.contains("found 1"), "{err}");
    }

    #[test]
    fn pretrained_empty_file_is_all_random() {
        let v = vocab("a b c");
        let (t, cov) =
            EmbeddingTable::read_pretrained("".as_bytes(), Path::new("e"), &v, 3, &mut Rng::new(5)).unwrap();
        assert_eq!(cov.found, 0);
        assert_eq!(cov.missing, 3);
        assert_eq!(t, EmbeddingTable::init_random(v.len(), 3, &mut Rng::new(5)).unwrap());
    }

    #[test]
    fn pretrained_accepts_count_header() {
        let v = vocab("a");
        let (t, cov) = EmbeddingTable::read_pretrained(
            "1 2\na 1.5 -1.5\n".as_bytes(),
            Path::new("e"),
            &v,
            2,
            &mut Rng::new(5),
        )
        .unwrap();
        assert_eq!(cov.found, 1);
        assert_eq!(t.weights.row(4), &[1.5, -1.5]);
    }

    #[test]
    fn lookup_rows_and_pad() {
        let v = vocab("a b c");
        let t = EmbeddingTable::init_random(v.len(), 3, &mut Rng::new(2)).unwrap();
        let all_pad = EncodedSeq::new(vec![5, 0, 0], 1).unwrap().with_capacity(3).unwrap();
        let vecs = t.lookup(&all_pad).unwrap();
        assert_eq!(vecs[1], vec![0.0; 3]);
        assert_eq!(vecs[0], t.weights.row(5));

        let seq = encode(&["c", "a", "zz", "a"], &v, 6).unwrap();
        let looked = t.lookup(&seq).unwrap();
        for (pos, &id) in seq.ids().iter().enumerate() {
            let manual: Vec<f64> = (0..3).map(|c| t.weights.get(id as usize, c)).collect();
            assert_eq!(looked[pos], manual);
        }
        assert_eq!(seq.ids()[2], UNK);
    }

    #[test]
    fn lookup_out_of_range() {
        let t = EmbeddingTable::init_random(5, 2, &mut Rng::new(2)).unwrap();
        let seq = EncodedSeq::new(vec![7], 1).unwrap();
        assert!(t.lookup(&seq).is_err());
    }

    #[test]
    fn grad_accumulates_repeats_and_skips_pad() {
        let seq = EncodedSeq::new(vec![4, 5, 4, 0], 3).unwrap();
        let up = vec![vec![1.0, 2.0], vec![10.0, 10.0], vec![0.5, -1.0], vec![9.0, 9.0]];
        let g = embed_grad_accumulate(EmbeddingGrad::new(2), &seq, &up).unwrap();
        assert_eq!(g.row(4).unwrap(), &[1.5, 1.0]);
        assert_eq!(g.row(5).unwrap(), &[10.0, 10.0]);
        assert!(g.row(0).is_none());
    }

    #[test]
    fn grad_all_pad_is_zero() {
        let seq_pad = EncodedSeq::new(vec![PAD; 3], 3).unwrap();
        let up = vec![vec![1.0]; 3];
        let g = embed_grad_accumulate(EmbeddingGrad::new(1), &seq_pad, &up).unwrap();
        assert!(g.is_zero());
        assert_eq!(g.rows().count(), 0);
    }

    #[test]
    fn grad_shape_mismatch() {
        let seq = EncodedSeq::new(vec![4, 5], 2).unwrap();
        assert!(embed_grad_accumulate(EmbeddingGrad::new(2), &seq, &[vec![1.0]]).is_err());
        assert!(embed_grad_accumulate(EmbeddingGrad::new(1), &seq, &vec![vec![1.0]; 3]).is_err());
    }
}
