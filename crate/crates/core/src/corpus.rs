//! Dialog corpus ingestion: tokenizing, vocabulary construction, fixed-capacity
//! encoding, and CSV loaders for training pairs and 10-candidate evaluation sets.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const EOU: u32 = 2;
pub const EOT: u32 = 3;

pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const EOU_TOKEN: &str = "__eou__";
pub const EOT_TOKEN: &str = "__eot__";

pub const SPECIAL_TOKENS: [&str; 4] = [PAD_TOKEN, UNK_TOKEN, EOU_TOKEN, EOT_TOKEN];
pub const NUM_SPECIAL: usize = SPECIAL_TOKENS.len();

/// Number of candidates in every evaluation set.
pub const NUM_CANDIDATES: usize = 10;

pub const TRAIN_HEADER: [&str; 3] = ["Context", "Utterance", "Label"];

/// Splits on runs of ASCII whitespace. The corpus ships pre-tokenized.
pub fn tokenize(text: &str) -> Vec<&str> {
    text.split_ascii_whitespace().collect()
}

/// Token ↔ id map. Ids `0..4` are the specials, the rest follow descending
/// corpus frequency with lexicographic tie-break.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, u32>,
    id_to_token: Vec<String>,
    min_count: usize,
}

impl Vocabulary {
    fn with_specials(min_count: usize) -> Self {
        let mut v = Vocabulary {
            token_to_id: HashMap::new(),
            id_to_token: Vec::new(),
            min_count,
        };
        for t in SPECIAL_TOKENS {
            v.push(t.to_string());
        }
        v
    }

    fn push(&mut self, token: String) {
        let id = self.id_to_token.len() as u32;
        self.token_to_id.insert(token.clone(), id);
        self.id_to_token.push(token);
    }

    /// Builds from any sequence of texts. Special tokens are never counted.
    pub fn build<I, S>(texts: I, min_count: usize) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        if min_count == 0 {
            return Err(Error::InvalidArgument("min_count must be >= 1".into()));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        for text in texts {
            for tok in tokenize(text.as_ref()) {
                if SPECIAL_TOKENS.contains(&tok) {
                    continue;
                }
                match counts.get_mut(tok) {
                    Some(c) => *c += 1,
                    None => {
                        counts.insert(tok.to_string(), 1);
                    }
                }
            }
        }
        let mut kept: Vec<(String, usize)> =
            counts.into_iter().filter(|&(_, c)| c >= min_count).collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

        let mut vocab = Vocabulary::with_specials(min_count);
        for (tok, _) in kept {
            vocab.push(tok);
        }
        Ok(vocab)
    }

    /// Builds from both text columns of a training CSV.
    pub fn build_from_train_csv(path: impl AsRef<Path>, min_count: usize) -> Result<Self> {
        let mut texts = Vec::new();
        for rec in load_train_set(path)? {
            let rec = rec?;
            texts.push(rec.context);
            texts.push(rec.response);
        }
        Vocabulary::build(&texts, min_count)
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn num_regular(&self) -> usize {
        self.len() - NUM_SPECIAL
    }

    pub fn min_count(&self) -> usize {
        self.min_count
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> u32 {
        self.id(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.id_to_token.iter().map(String::as_str)
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<&str> {
        ids.iter()
            .map(|&id| self.token(id).unwrap_or(UNK_TOKEN))
            .collect()
    }

    /// One `token<TAB>id` per line, ids ascending.
    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        for (id, tok) in self.id_to_token.iter().enumerate() {
            writeln!(w, "{tok}\t{id}")?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(file), path)
    }

    pub fn read_from(r: impl BufRead, origin: &Path) -> Result<Self> {
        let mut vocab = Vocabulary {
            token_to_id: HashMap::new(),
            id_to_token: Vec::new(),
            min_count: 1,
        };
        for (n, line) in r.lines().enumerate() {
            let lineno = n as u64 + 1;
            let line = line.map_err(|e| Error::io(origin, e))?;
            if line.is_empty() {
                continue;
            }
            let (tok, id) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(origin, lineno, "expected token<TAB>id"))?;
            let id: usize = id
                .parse()
                .map_err(|_| Error::parse(origin, lineno, format!("bad id {id:?}")))?;
            if id != vocab.len() {
                return Err(Error::parse(
                    origin,
                    lineno,
                    format!("ids must be dense and ascending: expected {}, found {id}", vocab.len()),
                ));
            }
            if vocab.token_to_id.contains_key(tok) {
                return Err(Error::parse(origin, lineno, format!("duplicate token {tok:?}")));
            }
            if id < NUM_SPECIAL && tok != SPECIAL_TOKENS[id] {
                return Err(Error::parse(
                    origin,
                    lineno,
                    format!("id {id} must be {:?}", SPECIAL_TOKENS[id]),
                ));
            }
            vocab.push(tok.to_string());
        }
        if vocab.len() < NUM_SPECIAL {
            return Err(Error::parse(origin, 0, "vocabulary is missing special tokens"));
        }
        Ok(vocab)
    }
}

/// Fixed-capacity id sequence padded at the tail with [`PAD`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedSeq {
    ids: Vec<u32>,
    true_len: usize,
}

impl EncodedSeq {
    pub fn new(ids: Vec<u32>, true_len: usize) -> Result<Self> {
        if true_len == 0 || true_len > ids.len() {
            return Err(Error::InvalidArgument(format!(
                "true_len {true_len} outside 1..={}",
                ids.len()
            )));
        }
        if ids[true_len..].iter().any(|&id| id != PAD) {
            return Err(Error::InvalidArgument("non-PAD id after true_len".into()));
        }
        Ok(EncodedSeq { ids, true_len })
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn true_len(&self) -> usize {
        self.true_len
    }

    pub fn capacity(&self) -> usize {
        self.ids.len()
    }

    pub fn real_ids(&self) -> &[u32] {
        &self.ids[..self.true_len]
    }

    /// Same tokens, more trailing padding.
    pub fn with_capacity(&self, capacity: usize) -> Result<Self> {
        if capacity < self.true_len {
            return Err(Error::InvalidArgument(format!(
                "capacity {capacity} below true_len {}",
                self.true_len
            )));
        }
        let mut ids = self.real_ids().to_vec();
        ids.resize(capacity, PAD);
        Ok(EncodedSeq {
            ids,
            true_len: self.true_len,
        })
    }
}

/// Maps tokens to ids, keeping the last `capacity` tokens when too long.
pub fn encode<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary, capacity: usize) -> Result<EncodedSeq> {
    if capacity == 0 {
        return Err(Error::InvalidArgument("capacity must be >= 1".into()));
    }
    if tokens.is_empty() {
        return Err(Error::Empty("cannot encode an empty token list".into()));
    }
    let start = tokens.len().saturating_sub(capacity);
    let mut ids: Vec<u32> = tokens[start..]
        .iter()
        .map(|t| vocab.id_or_unk(t.as_ref()))
        .collect();
    let true_len = ids.len();
    ids.resize(capacity, PAD);
    Ok(EncodedSeq { ids, true_len })
}

pub fn encode_text(text: &str, vocab: &Vocabulary, capacity: usize) -> Result<EncodedSeq> {
    encode(&tokenize(text), vocab, capacity)
}

/// Raw training row before encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainRecord {
    pub line: u64,
    pub context: String,
    pub response: String,
    pub label: u8,
}

/// Raw evaluation row; `candidates[0]` is the ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub line: u64,
    pub context: String,
    pub candidates: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DialogExample {
    pub context: EncodedSeq,
    pub response: EncodedSeq,
    pub label: u8,
}

impl DialogExample {
    pub fn encode(rec: &TrainRecord, vocab: &Vocabulary, caps: Capacities) -> Result<Self> {
        let context = encode_text(&rec.context, vocab, caps.context)
            .map_err(|_| Error::Empty(format!("line {}: empty context", rec.line)))?;
        let response = encode_text(&rec.response, vocab, caps.response)
            .map_err(|_| Error::Empty(format!("line {}: empty response", rec.line)))?;
        Ok(DialogExample {
            context,
            response,
            label: rec.label,
        })
    }

    pub fn target(&self) -> f64 {
        f64::from(self.label)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub context: EncodedSeq,
    pub candidates: Vec<EncodedSeq>,
    pub correct_index: usize,
}

impl CandidateSet {
    pub fn encode(rec: &EvalRecord, vocab: &Vocabulary, caps: Capacities) -> Result<Self> {
        let context = encode_text(&rec.context, vocab, caps.context)
            .map_err(|_| Error::Empty(format!("line {}: empty context", rec.line)))?;
        let candidates = rec
            .candidates
            .iter()
            .enumerate()
            .map(|(i, c)| {
                encode_text(c, vocab, caps.response)
                    .map_err(|_| Error::Empty(format!("line {}: empty candidate {i}", rec.line)))
            })
            .collect::<Result<Vec<_>>>()?;
        CandidateSet::new(context, candidates, 0)
    }

    pub fn new(context: EncodedSeq, candidates: Vec<EncodedSeq>, correct_index: usize) -> Result<Self> {
        if candidates.len() != NUM_CANDIDATES {
            return Err(Error::InvalidArgument(format!(
                "expected {NUM_CANDIDATES} candidates, got {}",
                candidates.len()
            )));
        }
        if correct_index >= NUM_CANDIDATES {
            return Err(Error::InvalidArgument(format!(
                "correct_index {correct_index} out of range"
            )));
        }
        Ok(CandidateSet {
            context,
            candidates,
            correct_index,
        })
    }
}

/// Sequence caps for contexts and responses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Capacities {
    pub context: usize,
    pub response: usize,
}

impl Default for Capacities {
    fn default() -> Self {
        Capacities {
            context: 160,
            response: 80,
        }
    }
}

fn open_csv(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file))
}

fn csv_error(path: &Path, err: csv::Error) -> Error {
    let line = err.position().map_or(0, |p| p.line());
    match err.into_kind() {
        csv::ErrorKind::Io(e) => Error::io(path, e),
        other => Error::parse(path, line, format!("{other:?}")),
    }
}

fn check_header(path: &Path, rdr: &mut csv::Reader<File>, expected: &[String]) -> Result<()> {
    let header = rdr.headers().map_err(|e| csv_error(path, e))?;
    let found: Vec<&str> = header.iter().collect();
    if found != expected.iter().map(String::as_str).collect::<Vec<_>>() {
        return Err(Error::parse(
            path,
            1,
            format!("expected header {:?}, found {:?}", expected.join(","), found.join(",")),
        ));
    }
    Ok(())
}

fn parse_label(raw: &str) -> Option<u8> {
    match raw.trim() {
        "0" | "0.0" => Some(0),
        "1" | "1.0" => Some(1),
        _ => None,
    }
}

/// Streaming reader over a `Context,Utterance,Label` CSV.
pub struct TrainReader {
    path: PathBuf,
    records: csv::StringRecordsIntoIter<File>,
}

impl Iterator for TrainReader {
    type Item = Result<TrainRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        let rec = match self.records.next()? {
            Ok(r) => r,
            Err(e) => return Some(Err(csv_error(&self.path, e))),
        };
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != TRAIN_HEADER.len() {
            return Some(Err(Error::parse(
                &self.path,
                line,
                format!("expected {} fields, found {}", TRAIN_HEADER.len(), rec.len()),
            )));
        }
        let Some(label) = parse_label(&rec[2]) else {
            return Some(Err(Error::parse(
                &self.path,
                line,
                format!("label must be 0 or 1, found {:?}", &rec[2]),
            )));
        };
        Some(Ok(TrainRecord {
            line,
            context: rec[0].to_string(),
            response: rec[1].to_string(),
            label,
        }))
    }
}

pub fn load_train_set(path: impl AsRef<Path>) -> Result<TrainReader> {
    let path = path.as_ref().to_path_buf();
    let mut rdr = open_csv(&path)?;
    let expected: Vec<String> = TRAIN_HEADER.iter().map(|s| s.to_string()).collect();
    check_header(&path, &mut rdr, &expected)?;
    Ok(TrainReader {
        path,
        records: rdr.into_records(),
    })
}

pub fn eval_header() -> Vec<String> {
    let mut h = vec!["Context".to_string(), "Ground Truth Utterance".to_string()];
    h.extend((0..NUM_CANDIDATES - 1).map(|i| format!("Distractor_{i}")));
    h
}

/// Streaming reader over a `Context,Ground Truth Utterance,Distractor_0..8` CSV.
pub struct EvalReader {
    path: PathBuf,
    records: csv::StringRecordsIntoIter<File>,
}

impl Iterator for EvalReader {
    type Item = Result<EvalRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        let rec = match self.records.next()? {
            Ok(r) => r,
            Err(e) => return Some(Err(csv_error(&self.path, e))),
        };
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != NUM_CANDIDATES + 1 {
            return Some(Err(Error::parse(
                &self.path,
                line,
                format!("expected {} fields, found {}", NUM_CANDIDATES + 1, rec.len()),
            )));
        }
        Some(Ok(EvalRecord {
            line,
            context: rec[0].to_string(),
            candidates: rec.iter().skip(1).map(str::to_string).collect(),
        }))
    }
}

pub fn load_eval_set(path: impl AsRef<Path>) -> Result<EvalReader> {
    let path = path.as_ref().to_path_buf();
    let mut rdr = open_csv(&path)?;
    check_header(&path, &mut rdr, &eval_header())?;
    Ok(EvalReader {
        path,
        records: rdr.into_records(),
    })
}

/// Loads and encodes a whole training file.
pub fn read_train_examples(path: impl AsRef<Path>, vocab: &Vocabulary, caps: Capacities) -> Result<Vec<DialogExample>> {
    load_train_set(path)?
        .map(|r| r.and_then(|rec| DialogExample::encode(&rec, vocab, caps)))
        .collect()
}

/// Loads and encodes a whole evaluation file.
pub fn read_eval_sets(path: impl AsRef<Path>, vocab: &Vocabulary, caps: Capacities) -> Result<Vec<CandidateSet>> {
    load_eval_set(path)?
        .map(|r| r.and_then(|rec| CandidateSet::encode(&rec, vocab, caps)))
        .collect()
}

/// Writers for the two CSV layouts, used for fixtures and corpus subsampling.
pub fn write_train_csv(path: impl AsRef<Path>, rows: &[TrainRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(TRAIN_HEADER).map_err(|e| csv_error(path, e))?;
    for r in rows {
        let label = r.label.to_string();
        w.write_record([r.context.as_str(), r.response.as_str(), label.as_str()])
            .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_eval_csv(path: impl AsRef<Path>, rows: &[EvalRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(eval_header()).map_err(|e| csv_error(path, e))?;
    for r in rows {
        if r.candidates.len() != NUM_CANDIDATES {
            return Err(Error::InvalidArgument(format!(
                "eval row needs {NUM_CANDIDATES} candidates, has {}",
                r.candidates.len()
            )));
        }
        let mut fields = vec![r.context.as_str()];
        fields.extend(r.candidates.iter().map(String::as_str));
        w.write_record(fields).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
