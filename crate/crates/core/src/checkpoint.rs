//! Self-describing checkpoint container.
//!
//! Layout: a UTF-8 header terminated by the line `end`, then the raw tensor
//! payloads as little-endian `f64`, concatenated in directory order.
//!
//! ```text
//! bienc-checkpoint
//! version 1
//! config <n>
//! key=value                      (n lines, sorted by key)
//! vocab <n>
//! token                          (n lines, id order)
//! tensors <n>
//! name rows cols offset fnv1a64  (n lines; offset in bytes from payload start)
//! end
//! <payload>
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, RankingModel};

pub const MAGIC: &str = "bienc-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: BTreeMap<String, String>,
    pub vocab: Vec<String>,
    pub tensors: Vec<Tensor>,
}

/// FNV-1a, 64-bit.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn tensor_bytes(data: &[f64]) -> Vec<u8> {
    data.iter().flat_map(|v| v.to_le_bytes()).collect()
}

impl Checkpoint {
    /// Snapshot of a model plus extra run settings. Model keys override
    /// entries of the same name in `extra`.
    pub fn from_model(model: &RankingModel, vocab: &Vocabulary, extra: &BTreeMap<String, String>) -> Self {
        let mut config = extra.clone();
        config.extend(model.config.to_pairs());
        Checkpoint {
            config,
            vocab: vocab.tokens().map(str::to_string).collect(),
            tensors: model
                .params()
                .into_iter()
                .map(|p| Tensor {
                    name: p.name,
                    rows: p.rows,
                    cols: p.cols,
                    data: p.data.to_vec(),
                })
                .collect(),
        }
    }

    pub fn model(&self) -> Result<RankingModel> {
        let cfg = ModelConfig::from_map(&self.config).map_err(|e| Error::checkpoint("config", e.to_string()))?;
        let tensors: Vec<(String, usize, usize, Vec<f64>)> = self
            .tensors
            .iter()
            .map(|t| (t.name.clone(), t.rows, t.cols, t.data.clone()))
            .collect();
        let model = RankingModel::from_tensors(cfg, &tensors)?;
        if model.vocab_size() != self.vocab.len() {
            return Err(Error::checkpoint(
                "vocab",
                format!(
                    "{} tokens but embedding has {} rows",
                    self.vocab.len(),
                    model.vocab_size()
                ),
            ));
        }
        Ok(model)
    }

    pub fn vocabulary(&self) -> Result<Vocabulary> {
        let mut text = String::new();
        for (id, tok) in self.vocab.iter().enumerate() {
            text.push_str(&format!("{tok}\t{id}\n"));
        }
        Vocabulary::read_from(text.as_bytes(), Path::new("<checkpoint vocab>"))
            .map_err(|e| Error::checkpoint("vocab", e.to_string()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = String::new();
        header.push_str(MAGIC);
        header.push('\n');
        header.push_str(&format!("version {VERSION}\n"));
        header.push_str(&format!("config {}\n", self.config.len()));
        for (k, v) in &self.config {
            header.push_str(&format!("{k}={v}\n"));
        }
        header.push_str(&format!("vocab {}\n", self.vocab.len()));
        for tok in &self.vocab {
            header.push_str(tok);
            header.push('\n');
        }
        header.push_str(&format!("tensors {}\n", self.tensors.len()));
        let mut payload = Vec::new();
        for t in &self.tensors {
            let bytes = tensor_bytes(&t.data);
            header.push_str(&format!(
                "{} {} {} {} {:016x}\n",
                t.name,
                t.rows,
                t.cols,
                payload.len(),
                fnv1a64(&bytes)
            ));
            payload.extend_from_slice(&bytes);
        }
        header.push_str("end\n");
        let mut out = header.into_bytes();
        out.extend_from_slice(&payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = HeaderCursor { bytes, pos: 0 };
        if cur.line("magic")? != MAGIC {
            return Err(Error::checkpoint("magic", "not a bienc checkpoint"));
        }
        let version: u32 = cur.counted("version", "version")? as u32;
        if version != VERSION {
            return Err(Error::checkpoint(
                "version",
                format!("unsupported version {version}, expected {VERSION}"),
            ));
        }
        let n_config = cur.counted("config", "config")?;
        let mut config = BTreeMap::new();
        for _ in 0..n_config {
            let line = cur.line("config")?;
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::checkpoint("config", format!("malformed entry {line:?}")))?;
            config.insert(k.to_string(), v.to_string());
        }
        let n_vocab = cur.counted("vocab", "vocab")?;
        let mut vocab = Vec::with_capacity(n_vocab);
        for _ in 0..n_vocab {
            vocab.push(cur.line("vocab")?.to_string());
        }
        let n_tensors = cur.counted("tensors", "tensor directory")?;
        let mut directory = Vec::with_capacity(n_tensors);
        for _ in 0..n_tensors {
            let line = cur.line("tensor directory")?;
            let f: Vec<&str> = line.split(' ').collect();
            let bad = || Error::checkpoint("tensor directory", format!("malformed entry {line:?}"));
            if f.len() != 5 {
                return Err(bad());
            }
            let rows: usize = f[1].parse().map_err(|_| bad())?;
            let cols: usize = f[2].parse().map_err(|_| bad())?;
            let offset: usize = f[3].parse().map_err(|_| bad())?;
            let sum = u64::from_str_radix(f[4], 16).map_err(|_| bad())?;
            directory.push((f[0].to_string(), rows, cols, offset, sum));
        }
        if cur.line("end")? != "end" {
            return Err(Error::checkpoint("end", "missing end-of-header marker"));
        }
        let payload = &bytes[cur.pos..];
        let mut tensors = Vec::with_capacity(n_tensors);
        let mut expected_offset = 0usize;
        for (name, rows, cols, offset, sum) in directory {
            let section = format!("tensor {name}");
            let len = rows
                .checked_mul(cols)
                .and_then(|n| n.checked_mul(8))
                .ok_or_else(|| Error::checkpoint(&section, "size overflow"))?;
            if offset != expected_offset {
                return Err(Error::checkpoint(&section, format!("offset {offset}, expected {expected_offset}")));
            }
            let chunk = payload
                .get(offset..offset + len)
                .ok_or_else(|| Error::checkpoint(&section, "payload truncated"))?;
            if fnv1a64(chunk) != sum {
                return Err(Error::checkpoint(&section, "checksum mismatch"));
            }
            let data = chunk
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            tensors.push(Tensor { name, rows, cols, data });
            expected_offset += len;
        }
        if expected_offset != payload.len() {
            return Err(Error::checkpoint(
                "payload",
                format!("{} trailing bytes", payload.len() - expected_offset),
            ));
        }
        Ok(Checkpoint { config, vocab, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderCursor<'a> {
    fn line(&mut self, section: &str) -> Result<&'a str> {
        let rest = &self.bytes[self.pos..];
        let nl = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::checkpoint(section, "header truncated"))?;
        let line = std::str::from_utf8(&rest[..nl]).map_err(|_| Error::checkpoint(section, "header is not UTF-8"))?;
        self.pos += nl + 1;
        Ok(line)
    }

    /// Parses `<keyword> <n>`.
    fn counted(&mut self, keyword: &str, section: &str) -> Result<usize> {
        let line = self.line(section)?;
        line.strip_prefix(keyword)
            .and_then(|r| r.strip_prefix(' '))
            .and_then(|n| n.parse().ok())
            .ok_or_else(|| Error::checkpoint(section, format!("expected '{keyword} <n>', found {line:?}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::EmbeddingTable;
    use crate::encoder::Pooling;
    use crate::model::Architecture;
    use crate::numkit::Rng;
    use crate::scoring::HeadKind;

    fn sample() -> (RankingModel, Vocabulary) {
        let vocab = Vocabulary::build(["alpha beta gamma delta"], 1).unwrap();
        let cfg = ModelConfig {
            arch: Architecture::DualEncoder,
            head: HeadKind::Bilinear,
            embed_dim: 3,
            hidden_size: 4,
            depth: 2,
            pooling: Pooling::Weighted,
            ..ModelConfig::default()
        };
        let mut rng = Rng::new(3);
        let emb = EmbeddingTable::init_random(vocab.len(), 3, &mut rng).unwrap();
        let mut model = RankingModel::new(cfg, emb, &mut rng).unwrap();
        model.bias = -0.123456789;
        (model, vocab)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (model, vocab) = sample();
        let mut extra = BTreeMap::new();
        extra.insert("seed".to_string(), "7".to_string());
        let ck = Checkpoint::from_model(&model, &vocab, &extra);
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.model().unwrap(), model);
        assert_eq!(back.vocabulary().unwrap(), {
            let mut v = vocab.clone();
            // the inline copy does not carry the build threshold
            v = Vocabulary::read_from(
                {
                    let mut b = Vec::new();
                    v.write_to(&mut b).unwrap();
                    b
                }
                .as_slice(),
                Path::new("x"),
            )
            .unwrap();
            v
        });
        assert_eq!(back.config["seed"], "7");
    }

    #[test]
    fn version_mismatch_is_error() {
        let (model, vocab) = sample();
        let bytes = Checkpoint::from_model(&model, &vocab, &BTreeMap::new()).to_bytes();
        let text = String::from_utf8_lossy(&bytes).replacen("version 1", "version 2", 1);
        let err = Checkpoint::from_bytes(text.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("version"), "{err}");
    }

    #[test]
    fn corrupted_payload_names_tensor() {
        let (model, vocab) = sample();
        let mut bytes = Checkpoint::from_model(&model, &vocab, &BTreeMap::new()).to_bytes();
        let n = bytes.len();
        bytes[n - 3] ^= 0xff;
        let err = Checkpoint::from_bytes(&bytes).unwrap_err().to_string();
        assert!(err.contains("tensor bias") && err.contains("checksum"), "{err}");
    }

    #[test]
    fn truncated_file_is_error() {
        let (model, vocab) = sample();
        let bytes = Checkpoint::from_model(&model, &vocab, &BTreeMap::new()).to_bytes();
        let err = Checkpoint::from_bytes(&bytes[..bytes.len() - 8]).unwrap_err().to_string();
        assert!(err.contains("truncated"), "{err}");
        assert!(Checkpoint::from_bytes(b"garbage\n").is_err());
        assert!(Checkpoint::from_bytes(b"").is_err());
    }

    #[test]
    fn fnv_reference() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
    }
}
