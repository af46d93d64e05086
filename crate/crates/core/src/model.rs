//! Bi-encoder and dual-encoder ranking models: forward pass, backward pass and
//! a flat view of the parameters for the optimizer and checkpoints.

use std::collections::BTreeMap;

use crate::corpus::{DialogExample, EncodedSeq};
use crate::embedding::{EmbeddingGrad, EmbeddingTable};
use crate::encoder::{self, EncoderCache, EncoderStack, Pooling};
use crate::error::{Error, Result};
use crate::numkit::{Matrix, Rng};
use crate::scoring::{bce_loss, score_grads, HeadKind, Link, ScoreOutput, SimilarityHead};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Architecture {
    /// Separate context and response encoders.
    BiEncoder,
    /// One shared encoder and a bilinear head.
    DualEncoder,
}

impl Architecture {
    pub fn name(self) -> &'static str {
        match self {
            Architecture::BiEncoder => "be",
            Architecture::DualEncoder => "de",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "be" | "bi-encoder" => Some(Architecture::BiEncoder),
            "de" | "dual-encoder" => Some(Architecture::DualEncoder),
            _ => None,
        }
    }
}

/// Shape of a model, independent of its weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub arch: Architecture,
    pub embed_dim: usize,
    pub hidden_size: usize,
    pub depth: usize,
    pub head: HeadKind,
    pub poly_degree: u32,
    pub poly_offset: f64,
    pub pooling: Pooling,
    pub link: Link,
    pub freeze_embeddings: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            arch: Architecture::BiEncoder,
            embed_dim: 300,
            hidden_size: 200,
            depth: 1,
            head: HeadKind::Dot,
            poly_degree: 3,
            poly_offset: 0.0,
            pooling: Pooling::Final,
            link: Link::Standard,
            freeze_embeddings: false,
        }
    }
}

impl ModelConfig {
    pub const KEYS: [&'static str; 10] = [
        "arch",
        "embed_dim",
        "hidden_size",
        "depth",
        "head",
        "poly_degree",
        "poly_offset",
        "pooling",
        "link",
        "freeze_embeddings",
    ];

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.embed_dim == 0 {
            problems.push("embed_dim must be >= 1".to_string());
        }
        if self.hidden_size == 0 {
            problems.push("hidden_size must be >= 1".to_string());
        }
        if self.depth == 0 {
            problems.push("depth must be >= 1".to_string());
        }
        if self.arch == Architecture::DualEncoder && self.head != HeadKind::Bilinear {
            problems.push(format!(
                "the dual encoder requires the bilinear head, got {}",
                self.head.name()
            ));
        }
        if self.poly_offset < 0.0 || !self.poly_offset.is_finite() {
            problems.push("poly_offset must be finite and >= 0".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(problems.join("; ")))
        }
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        vec![
            ("arch".into(), self.arch.name().into()),
            ("embed_dim".into(), self.embed_dim.to_string()),
            ("hidden_size".into(), self.hidden_size.to_string()),
            ("depth".into(), self.depth.to_string()),
            ("head".into(), self.head.name().into()),
            ("poly_degree".into(), self.poly_degree.to_string()),
            ("poly_offset".into(), self.poly_offset.to_string()),
            ("pooling".into(), self.pooling.name().into()),
            ("link".into(), self.link.name().into()),
            ("freeze_embeddings".into(), self.freeze_embeddings.to_string()),
        ]
    }

    /// Reads the model keys out of a larger key/value map; other keys are ignored.
    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        let mut problems = Vec::new();
        for key in Self::KEYS {
            if let Some(v) = map.get(key) {
                if let Err(e) = cfg.set(key, v) {
                    problems.push(e);
                }
            }
        }
        if !problems.is_empty() {
            return Err(Error::InvalidArgument(problems.join("; ")));
        }
        Ok(cfg)
    }

    /// Sets one key. Returns `Err(message)` for a bad value; unknown keys are
    /// reported as such.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let bad = || format!("invalid value {value:?} for {key}");
        match key {
            "arch" => self.arch = Architecture::parse(value).ok_or_else(bad)?,
            "embed_dim" => self.embed_dim = value.parse().map_err(|_| bad())?,
            "hidden_size" => self.hidden_size = value.parse().map_err(|_| bad())?,
            "depth" => self.depth = value.parse().map_err(|_| bad())?,
            "head" => self.head = HeadKind::parse(value).ok_or_else(bad)?,
            "poly_degree" => self.poly_degree = value.parse().map_err(|_| bad())?,
            "poly_offset" => self.poly_offset = value.parse().map_err(|_| bad())?,
            "pooling" => self.pooling = Pooling::parse(value).ok_or_else(bad)?,
            "link" => self.link = Link::parse(value).ok_or_else(bad)?,
            "freeze_embeddings" => self.freeze_embeddings = value.parse().map_err(|_| bad())?,
            _ => return Err(format!("unknown key {key}")),
        }
        Ok(())
    }

    fn build_head(&self) -> SimilarityHead {
        match self.head {
            HeadKind::Dot => SimilarityHead::Dot,
            HeadKind::Cosine => SimilarityHead::Cosine,
            HeadKind::Polynomial => SimilarityHead::Polynomial {
                max_degree: self.poly_degree,
                offset: self.poly_offset,
            },
            HeadKind::Bilinear => SimilarityHead::bilinear_identity(self.hidden_size),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankingModel {
    pub config: ModelConfig,
    pub context_encoder: EncoderStack,
    /// `None` for the dual encoder, which reuses `context_encoder`.
    pub response_encoder: Option<EncoderStack>,
    pub embedding: EmbeddingTable,
    pub head: SimilarityHead,
    pub bias: f64,
}

/// Borrowed view of one parameter tensor.
#[derive(Debug)]
pub struct ParamView<'a> {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub trainable: bool,
    pub data: &'a [f64],
}

pub struct ParamViewMut<'a> {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub trainable: bool,
    pub data: &'a mut [f64],
}

/// Cached forward state for one (context, response) pair.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    context: EncodedSeq,
    response: EncodedSeq,
    context_cache: EncoderCache,
    response_cache: EncoderCache,
    u: Vec<f64>,
    r: Vec<f64>,
    pub output: ScoreOutput,
}

impl ForwardCache {
    pub fn context_vector(&self) -> &[f64] {
        &self.u
    }

    pub fn response_vector(&self) -> &[f64] {
        &self.r
    }
}

/// Gradients of one example's loss. Embedding gradients stay sparse.
#[derive(Debug, Clone)]
pub struct ExampleGrads {
    pub loss: f64,
    pub output: ScoreOutput,
    pub context: EncoderStack,
    pub response: Option<EncoderStack>,
    pub embedding: Option<EmbeddingGrad>,
    pub bilinear: Option<Matrix>,
    pub bias: f64,
}

/// Dense gradients aligned with [`RankingModel::trainable_params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_for(model: &RankingModel) -> Self {
        Gradients {
            tensors: model
                .params()
                .into_iter()
                .filter(|p| p.trainable)
                .map(|p| vec![0.0; p.data.len()])
                .collect(),
        }
    }

    pub fn norm(&self) -> f64 {
        self.tensors
            .iter()
            .flatten()
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, alpha: f64) {
        for v in self.tensors.iter_mut().flatten() {
            *v *= alpha;
        }
    }

    pub fn is_zero(&self) -> bool {
        self.tensors.iter().flatten().all(|&v| v == 0.0)
    }

    /// `self += alpha * example`
    pub fn add_example(&mut self, model: &RankingModel, ex: &ExampleGrads, alpha: f64) -> Result<()> {
        let mut slot = 0;
        let add_dense = |tensors: &mut Vec<Vec<f64>>, slot: &mut usize, src: &[f64]| {
            for (d, s) in tensors[*slot].iter_mut().zip(src) {
                *d += alpha * s;
            }
            *slot += 1;
        };
        for layer in &ex.context.layers {
            add_dense(&mut self.tensors, &mut slot, layer.weights.as_slice());
            add_dense(&mut self.tensors, &mut slot, &layer.bias);
        }
        if let Some(resp) = &ex.response {
            for layer in &resp.layers {
                add_dense(&mut self.tensors, &mut slot, layer.weights.as_slice());
                add_dense(&mut self.tensors, &mut slot, &layer.bias);
            }
        }
        if model.embedding.trainable {
            if let Some(eg) = &ex.embedding {
                let dim = model.embedding.dim();
                let dense = &mut self.tensors[slot];
                for (id, g) in eg.rows() {
                    let start = id as usize * dim;
                    for (d, s) in dense[start..start + dim].iter_mut().zip(g) {
                        *d += alpha * s;
                    }
                }
            }
            slot += 1;
        }
        if let Some(dm) = &ex.bilinear {
            add_dense(&mut self.tensors, &mut slot, dm.as_slice());
        }
        add_dense(&mut self.tensors, &mut slot, std::slice::from_ref(&ex.bias));
        if slot != self.tensors.len() {
            return Err(Error::DimMismatch {
                op: "Gradients::add_example tensors",
                left: self.tensors.len(),
                right: slot,
            });
        }
        Ok(())
    }
}

impl RankingModel {
    /// Fresh model: encoders from `rng`, head at its neutral start, bias 0.
    pub fn new(config: ModelConfig, embedding: EmbeddingTable, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        if embedding.dim() != config.embed_dim {
            return Err(Error::DimMismatch {
                op: "embedding dim",
                left: config.embed_dim,
                right: embedding.dim(),
            });
        }
        let context_encoder = EncoderStack::init(config.embed_dim, config.hidden_size, config.depth, rng)?;
        let response_encoder = match config.arch {
            Architecture::BiEncoder => Some(EncoderStack::init(
                config.embed_dim,
                config.hidden_size,
                config.depth,
                rng,
            )?),
            Architecture::DualEncoder => None,
        };
        let mut embedding = embedding;
        embedding.trainable = !config.freeze_embeddings;
        let head = config.build_head();
        Ok(RankingModel {
            config,
            context_encoder,
            response_encoder,
            embedding,
            head,
            bias: 0.0,
        })
    }

    pub fn response_stack(&self) -> &EncoderStack {
        self.response_encoder.as_ref().unwrap_or(&self.context_encoder)
    }

    pub fn vocab_size(&self) -> usize {
        self.embedding.vocab_size()
    }

    fn encode_side(&self, stack: &EncoderStack, seq: &EncodedSeq) -> Result<(Vec<f64>, EncoderCache)> {
        let embedded = self.embedding.lookup(seq)?;
        let (out, cache) = encoder::forward(stack, &embedded, seq.true_len())?;
        Ok((self.config.pooling.pool(&out), cache))
    }

    pub fn encode_context(&self, seq: &EncodedSeq) -> Result<Vec<f64>> {
        self.encode_side(&self.context_encoder, seq).map(|(v, _)| v)
    }

    pub fn encode_response(&self, seq: &EncodedSeq) -> Result<Vec<f64>> {
        self.encode_side(self.response_stack(), seq).map(|(v, _)| v)
    }

    pub fn score_vectors(&self, u: &[f64], r: &[f64]) -> Result<ScoreOutput> {
        let sim = self.head.similarity(u, r)?;
        Ok(ScoreOutput::new(sim, self.bias, self.config.link))
    }

    pub fn score(&self, context: &EncodedSeq, response: &EncodedSeq) -> Result<ScoreOutput> {
        let u = self.encode_context(context)?;
        let r = self.encode_response(response)?;
        self.score_vectors(&u, &r)
    }

    pub fn forward(&self, example: &DialogExample) -> Result<(ScoreOutput, ForwardCache)> {
        let (u, context_cache) = self.encode_side(&self.context_encoder, &example.context)?;
        let (r, response_cache) = self.encode_side(self.response_stack(), &example.response)?;
        let output = self.score_vectors(&u, &r)?;
        Ok((
            output,
            ForwardCache {
                context: example.context.clone(),
                response: example.response.clone(),
                context_cache,
                response_cache,
                u,
                r,
                output,
            },
        ))
    }

    pub fn loss(&self, example: &DialogExample) -> Result<f64> {
        let (out, _) = self.forward(example)?;
        Ok(bce_loss(out.p, example.target()))
    }

    pub fn backward(&self, cache: &ForwardCache, q: f64) -> Result<ExampleGrads> {
        if cache.context_cache.capacity() != cache.context.capacity()
            || cache.response_cache.capacity() != cache.response.capacity()
        {
            return Err(Error::InvalidArgument("stale forward cache".into()));
        }
        let sg = score_grads(&self.head, &cache.u, &cache.r, self.bias, q, self.config.link)?;
        let pooling = self.config.pooling;
        let (mut ctx_grads, dx_ctx) =
            encoder::encoder_backward(&self.context_encoder, &cache.context_cache, &sg.du, pooling)?;
        let (resp_grads, dx_resp) =
            encoder::encoder_backward(self.response_stack(), &cache.response_cache, &sg.dr, pooling)?;
        let response = match self.config.arch {
            Architecture::BiEncoder => Some(resp_grads),
            Architecture::DualEncoder => {
                ctx_grads.add_assign(&resp_grads);
                None
            }
        };
        let embedding = if self.embedding.trainable {
            let mut eg = EmbeddingGrad::new(self.embedding.dim());
            eg.accumulate(&cache.context, &dx_ctx)?;
            eg.accumulate(&cache.response, &dx_resp)?;
            Some(eg)
        } else {
            None
        };
        Ok(ExampleGrads {
            loss: sg.loss,
            output: sg.output,
            context: ctx_grads,
            response,
            embedding,
            bilinear: sg.dm,
            bias: sg.db,
        })
    }

    /// Forward and backward for one labelled example.
    pub fn example_grads(&self, example: &DialogExample) -> Result<ExampleGrads> {
        let (_, cache) = self.forward(example)?;
        self.backward(&cache, example.target())
    }

    /// Every parameter tensor in canonical order: context layers, response
    /// layers (bi-encoder), embedding, bilinear matrix (if any), bias.
    pub fn params(&self) -> Vec<ParamView<'_>> {
        let mut out = Vec::new();
        for (prefix, stack) in self.stacks() {
            for (l, layer) in stack.layers.iter().enumerate() {
                out.push(ParamView {
                    name: format!("{prefix}.l{l}.weight"),
                    rows: layer.weights.rows(),
                    cols: layer.weights.cols(),
                    trainable: true,
                    data: layer.weights.as_slice(),
                });
                out.push(ParamView {
                    name: format!("{prefix}.l{l}.bias"),
                    rows: layer.bias.len(),
                    cols: 1,
                    trainable: true,
                    data: &layer.bias,
                });
            }
        }
        out.push(ParamView {
            name: "embedding".into(),
            rows: self.embedding.vocab_size(),
            cols: self.embedding.dim(),
            trainable: self.embedding.trainable,
            data: self.embedding.weights.as_slice(),
        });
        if let SimilarityHead::Bilinear { m } = &self.head {
            out.push(ParamView {
                name: "head.m".into(),
                rows: m.rows(),
                cols: m.cols(),
                trainable: true,
                data: m.as_slice(),
            });
        }
        out.push(ParamView {
            name: "bias".into(),
            rows: 1,
            cols: 1,
            trainable: true,
            data: std::slice::from_ref(&self.bias),
        });
        out
    }

    fn stacks(&self) -> Vec<(&'static str, &EncoderStack)> {
        let mut v = vec![("context", &self.context_encoder)];
        if let Some(r) = &self.response_encoder {
            v.push(("response", r));
        }
        v
    }

    /// Mutable counterpart of [`RankingModel::params`], same order.
    pub fn params_mut(&mut self) -> Vec<ParamViewMut<'_>> {
        let mut out = Vec::new();
        let mut stacks: Vec<(&'static str, &mut EncoderStack)> = vec![("context", &mut self.context_encoder)];
        if let Some(r) = self.response_encoder.as_mut() {
            stacks.push(("response", r));
        }
        for (prefix, stack) in stacks {
            for (l, layer) in stack.layers.iter_mut().enumerate() {
                let (rows, cols) = (layer.weights.rows(), layer.weights.cols());
                out.push(ParamViewMut {
                    name: format!("{prefix}.l{l}.weight"),
                    rows,
                    cols,
                    trainable: true,
                    data: layer.weights.as_mut_slice(),
                });
                out.push(ParamViewMut {
                    name: format!("{prefix}.l{l}.bias"),
                    rows: layer.bias.len(),
                    cols: 1,
                    trainable: true,
                    data: &mut layer.bias,
                });
            }
        }
        let (rows, cols) = (self.embedding.vocab_size(), self.embedding.dim());
        out.push(ParamViewMut {
            name: "embedding".into(),
            rows,
            cols,
            trainable: self.embedding.trainable,
            data: self.embedding.weights.as_mut_slice(),
        });
        if let SimilarityHead::Bilinear { m } = &mut self.head {
            let (rows, cols) = (m.rows(), m.cols());
            out.push(ParamViewMut {
                name: "head.m".into(),
                rows,
                cols,
                trainable: true,
                data: m.as_mut_slice(),
            });
        }
        out.push(ParamViewMut {
            name: "bias".into(),
            rows: 1,
            cols: 1,
            trainable: true,
            data: std::slice::from_mut(&mut self.bias),
        });
        out
    }

    pub fn trainable_params_mut(&mut self) -> Vec<ParamViewMut<'_>> {
        self.params_mut().into_iter().filter(|p| p.trainable).collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.params().iter().map(|p| p.data.len()).sum()
    }

    /// Rebuilds a model from its config and a full tensor list in canonical order.
    pub fn from_tensors(config: ModelConfig, tensors: &[(String, usize, usize, Vec<f64>)]) -> Result<Self> {
        config.validate()?;
        let vocab_size = tensors
            .iter()
            .find(|t| t.0 == "embedding")
            .map(|t| t.1)
            .ok_or_else(|| Error::checkpoint("tensors", "missing embedding"))?;
        let mut rng = Rng::new(0);
        let embedding = EmbeddingTable::init_random(vocab_size, config.embed_dim, &mut rng)?;
        let mut model = RankingModel::new(config, embedding, &mut rng)?;
        {
            let mut views = model.params_mut();
            if views.len() != tensors.len() {
                return Err(Error::checkpoint(
                    "tensors",
                    format!("expected {} tensors, found {}", views.len(), tensors.len()),
                ));
            }
            for (view, (name, rows, cols, data)) in views.iter_mut().zip(tensors) {
                if &view.name != name || view.rows != *rows || view.cols != *cols {
                    return Err(Error::checkpoint(
                        format!("tensor {name}"),
                        format!(
                            "expected {} [{}x{}], found {name} [{rows}x{cols}]",
                            view.name, view.rows, view.cols
                        ),
                    ));
                }
                view.data.copy_from_slice(data);
            }
        }
        Ok(model)
    }
}
