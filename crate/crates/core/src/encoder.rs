//! LSTM sequence encoder with exact reverse-mode gradients.
//!
//! One layer holds a fused weight matrix of shape `4s × (d_in + s)` acting on
//! the concatenation `[x_t; h_{t-1}]`, with gate blocks stacked in the order
//! input, forget, output, candidate:
//!
//! ```text
//! i = σ(W_i z + b_i)    f = σ(W_f z + b_f)    o = σ(W_o z + b_o)
//! g = tanh(W_g z + b_g)
//! c_t = f ⊙ c_{t-1} + i ⊙ g
//! h_t = o ⊙ tanh(c_t)
//! ```
//!
//! Sequences are padded to a fixed capacity; steps run only over the real
//! prefix, so trailing padding never touches the state or the gradients.

use crate::error::{check_dims, Error, Result};
use crate::numkit::{dot_unchecked, sigmoid, Matrix, Rng};

pub const FORGET_BIAS_INIT: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Input,
    Forget,
    Output,
    Candidate,
}

impl Gate {
    pub const ALL: [Gate; 4] = [Gate::Input, Gate::Forget, Gate::Output, Gate::Candidate];

    pub fn block(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Gate::Input => "i",
            Gate::Forget => "f",
            Gate::Output => "o",
            Gate::Candidate => "g",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    input_size: usize,
    hidden_size: usize,
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl LstmParams {
    pub fn zeros(input_size: usize, hidden_size: usize) -> Self {
        LstmParams {
            input_size,
            hidden_size,
            weights: Matrix::zeros(4 * hidden_size, input_size + hidden_size),
            bias: vec![0.0; 4 * hidden_size],
        }
    }

    /// Weights uniform in `[-1/√s, 1/√s)`, forget-gate bias 1, other biases 0.
    pub fn init(input_size: usize, hidden_size: usize, rng: &mut Rng) -> Result<Self> {
        if input_size == 0 || hidden_size == 0 {
            return Err(Error::InvalidArgument(format!(
                "LSTM sizes must be >= 1 (input {input_size}, hidden {hidden_size})"
            )));
        }
        let bound = 1.0 / (hidden_size as f64).sqrt();
        let weights = Matrix::random_uniform(
            4 * hidden_size,
            input_size + hidden_size,
            -bound,
            bound,
            rng,
        )?;
        let mut bias = vec![0.0; 4 * hidden_size];
        let s = hidden_size;
        let f = Gate::Forget.block();
        bias[f * s..(f + 1) * s].fill(FORGET_BIAS_INIT);
        Ok(LstmParams {
            input_size,
            hidden_size,
            weights,
            bias,
        })
    }

    pub fn from_parts(input_size: usize, hidden_size: usize, weights: Matrix, bias: Vec<f64>) -> Result<Self> {
        check_dims("LstmParams rows", 4 * hidden_size, weights.rows())?;
        check_dims("LstmParams cols", input_size + hidden_size, weights.cols())?;
        check_dims("LstmParams bias", 4 * hidden_size, bias.len())?;
        Ok(LstmParams {
            input_size,
            hidden_size,
            weights,
            bias,
        })
    }

    pub fn input_size(&self) -> usize {
        self.input_size
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden_size
    }

    pub fn zeros_like(&self) -> Self {
        LstmParams::zeros(self.input_size, self.hidden_size)
    }

    pub fn gate_bias(&self, gate: Gate) -> &[f64] {
        let s = self.hidden_size;
        &self.bias[gate.block() * s..(gate.block() + 1) * s]
    }

    /// Row range of `gate` inside the fused weight matrix.
    pub fn gate_rows(&self, gate: Gate) -> std::ops::Range<usize> {
        let s = self.hidden_size;
        gate.block() * s..(gate.block() + 1) * s
    }

    fn step_cached(&self, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> Result<StepCache> {
        check_dims("lstm_step input", self.input_size, x.len())?;
        check_dims("lstm_step hidden", self.hidden_size, h_prev.len())?;
        check_dims("lstm_step cell", self.hidden_size, c_prev.len())?;
        let s = self.hidden_size;
        let mut z = Vec::with_capacity(self.input_size + s);
        z.extend_from_slice(x);
        z.extend_from_slice(h_prev);

        let mut act: Vec<f64> = (0..4 * s)
            .map(|r| dot_unchecked(self.weights.row(r), &z) + self.bias[r])
            .collect();
        for (r, a) in act.iter_mut().enumerate() {
            *a = if r < 3 * s { sigmoid(*a) } else { a.tanh() };
        }
        let mut c = vec![0.0; s];
        let mut tanh_c = vec![0.0; s];
        let mut h = vec![0.0; s];
        for k in 0..s {
            let (i, f, o, g) = (act[k], act[s + k], act[2 * s + k], act[3 * s + k]);
            c[k] = f * c_prev[k] + i * g;
            tanh_c[k] = c[k].tanh();
            h[k] = o * tanh_c[k];
        }
        Ok(StepCache {
            z,
            gates: act,
            c_prev: c_prev.to_vec(),
            c,
            tanh_c,
            h,
        })
    }
}

/// One LSTM cell step, returning `(h_t, c_t)`.
pub fn lstm_step(params: &LstmParams, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let st = params.step_cached(x, h_prev, c_prev)?;
    Ok((st.h, st.c))
}

#[derive(Debug, Clone)]
struct StepCache {
    z: Vec<f64>,
    // post-activation gates, fused [i; f; o; g]
    gates: Vec<f64>,
    c_prev: Vec<f64>,
    c: Vec<f64>,
    tanh_c: Vec<f64>,
    h: Vec<f64>,
}

/// Stacked LSTM; layer 0 reads embeddings, layer `l > 0` reads layer `l-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderStack {
    pub layers: Vec<LstmParams>,
}

impl EncoderStack {
    pub fn init(input_size: usize, hidden_size: usize, depth: usize, rng: &mut Rng) -> Result<Self> {
        if depth == 0 {
            return Err(Error::InvalidArgument("encoder depth must be >= 1".into()));
        }
        let layers = (0..depth)
            .map(|l| {
                let d_in = if l == 0 { input_size } else { hidden_size };
                LstmParams::init(d_in, hidden_size, rng)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(EncoderStack { layers })
    }

    pub fn from_layers(layers: Vec<LstmParams>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("encoder depth must be >= 1".into()));
        }
        for w in layers.windows(2) {
            check_dims("EncoderStack chaining", w[0].hidden_size(), w[1].input_size())?;
        }
        Ok(EncoderStack { layers })
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].input_size()
    }

    pub fn hidden_size(&self) -> usize {
        self.layers[self.layers.len() - 1].hidden_size()
    }

    pub fn zeros_like(&self) -> Self {
        EncoderStack {
            layers: self.layers.iter().map(LstmParams::zeros_like).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &EncoderStack) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weights.as_mut_slice().iter_mut().zip(b.weights.as_slice()) {
                *x += y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    /// `capacity × s`; rows at and beyond `true_len` are zero.
    pub hidden_states: Matrix,
    pub final_hidden: Vec<f64>,
    pub final_cell: Vec<f64>,
    pub true_len: usize,
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct EncoderCache {
    layers: Vec<Vec<StepCache>>,
    capacity: usize,
    true_len: usize,
}

impl EncoderCache {
    pub fn true_len(&self) -> usize {
        self.true_len
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }
}

/// Forward pass over a padded sequence, keeping the per-step cache.
pub fn forward(stack: &EncoderStack, embedded: &[Vec<f64>], true_len: usize) -> Result<(EncoderOutput, EncoderCache)> {
    let capacity = embedded.len();
    if true_len == 0 || true_len > capacity {
        return Err(Error::InvalidArgument(format!(
            "true_len {true_len} outside 1..={capacity}"
        )));
    }
    let mut layer_caches = Vec::with_capacity(stack.depth());
    let mut inputs: Vec<Vec<f64>> = embedded[..true_len].to_vec();
    for params in &stack.layers {
        let s = params.hidden_size();
        let mut h = vec![0.0; s];
        let mut c = vec![0.0; s];
        let mut steps = Vec::with_capacity(true_len);
        for x in &inputs {
            let st = params.step_cached(x, &h, &c)?;
            h.clone_from(&st.h);
            c.clone_from(&st.c);
            steps.push(st);
        }
        inputs = steps.iter().map(|st| st.h.clone()).collect();
        layer_caches.push(steps);
    }
    let top = layer_caches.last().expect("depth >= 1");
    let s = stack.hidden_size();
    let mut hidden_states = Matrix::zeros(capacity, s);
    for (t, st) in top.iter().enumerate() {
        hidden_states.row_mut(t).copy_from_slice(&st.h);
    }
    let last = &top[true_len - 1];
    let out = EncoderOutput {
        hidden_states,
        final_hidden: last.h.clone(),
        final_cell: last.c.clone(),
        true_len,
    };
    Ok((
        out,
        EncoderCache {
            layers: layer_caches,
            capacity,
            true_len,
        },
    ))
}

pub fn encode_sequence(stack: &EncoderStack, embedded: &[Vec<f64>], true_len: usize) -> Result<EncoderOutput> {
    forward(stack, embedded, true_len).map(|(out, _)| out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pooling {
    /// Last real hidden state.
    Final,
    /// `Σ_t (t²/T²) h_t` over the real prefix, `T = true_len`.
    Weighted,
}

impl Pooling {
    pub fn name(self) -> &'static str {
        match self {
            Pooling::Final => "final",
            Pooling::Weighted => "weighted",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "final" => Some(Pooling::Final),
            "weighted" => Some(Pooling::Weighted),
            _ => None,
        }
    }

    pub fn pool(self, out: &EncoderOutput) -> Vec<f64> {
        match self {
            Pooling::Final => pool_final(out),
            Pooling::Weighted => pool_weighted(out, out.true_len),
        }
    }

    /// Gradient w.r.t. each real hidden state given the gradient at the pooled vector.
    fn backward(self, true_len: usize, upstream: &[f64]) -> Vec<Vec<f64>> {
        let s = upstream.len();
        match self {
            Pooling::Final => {
                let mut d = vec![vec![0.0; s]; true_len];
                d[true_len - 1] = upstream.to_vec();
                d
            }
            Pooling::Weighted => (1..=true_len)
                .map(|t| {
                    let w = position_weight(t, true_len);
                    upstream.iter().map(|g| w * g).collect()
                })
                .collect(),
        }
    }
}

/// `t² / T²` for 1-based position `t`.
pub fn position_weight(t: usize, len: usize) -> f64 {
    let (t, len) = (t as f64, len as f64);
    (t * t) / (len * len)
}

pub fn pool_final(out: &EncoderOutput) -> Vec<f64> {
    out.final_hidden.clone()
}

pub fn pool_weighted(out: &EncoderOutput, true_len: usize) -> Vec<f64> {
    let s = out.hidden_states.cols();
    let mut acc = vec![0.0; s];
    for t in 1..=true_len {
        let w = position_weight(t, true_len);
        for (a, h) in acc.iter_mut().zip(out.hidden_states.row(t - 1)) {
            *a += w * h;
        }
    }
    acc
}

/// Reverse pass from a gradient at the pooled output. Returns the parameter
/// gradients (same shape as `stack`) and one input gradient per position of
/// the padded sequence (zero at padding).
pub fn encoder_backward(
    stack: &EncoderStack,
    cache: &EncoderCache,
    upstream: &[f64],
    pooling: Pooling,
) -> Result<(EncoderStack, Vec<Vec<f64>>)> {
    check_dims("encoder_backward upstream", stack.hidden_size(), upstream.len())?;
    let dh_top = pooling.backward(cache.true_len, upstream);
    backward_from_states(stack, cache, dh_top)
}

/// Reverse pass given `∂L/∂h_t` for every real position of the top layer.
pub fn backward_from_states(
    stack: &EncoderStack,
    cache: &EncoderCache,
    dh_top: Vec<Vec<f64>>,
) -> Result<(EncoderStack, Vec<Vec<f64>>)> {
    if cache.layers.len() != stack.depth() {
        return Err(Error::DimMismatch {
            op: "encoder_backward depth",
            left: stack.depth(),
            right: cache.layers.len(),
        });
    }
    check_dims("encoder_backward positions", cache.true_len, dh_top.len())?;
    let mut grads = stack.zeros_like();
    let mut dh_ext = dh_top;
    for (l, params) in stack.layers.iter().enumerate().rev() {
        let steps = &cache.layers[l];
        let s = params.hidden_size();
        let d = params.input_size();
        let gl = &mut grads.layers[l];
        let mut dx_seq = vec![vec![0.0; d]; steps.len()];
        let mut dh_next = vec![0.0; s];
        let mut dc_next = vec![0.0; s];
        let mut da = vec![0.0; 4 * s];
        for t in (0..steps.len()).rev() {
            let st = &steps[t];
            check_dims("encoder_backward cache width", s, st.h.len())?;
            for k in 0..s {
                let (i, f, o, g) = (st.gates[k], st.gates[s + k], st.gates[2 * s + k], st.gates[3 * s + k]);
                let dh = dh_ext[t][k] + dh_next[k];
                let tc = st.tanh_c[k];
                let d_o = dh * tc;
                let dc = dc_next[k] + dh * o * (1.0 - tc * tc);
                let d_i = dc * g;
                let d_g = dc * i;
                let d_f = dc * st.c_prev[k];
                dc_next[k] = dc * f;
                da[k] = d_i * i * (1.0 - i);
                da[s + k] = d_f * f * (1.0 - f);
                da[2 * s + k] = d_o * o * (1.0 - o);
                da[3 * s + k] = d_g * (1.0 - g * g);
            }
            gl.weights.add_outer(1.0, &da, &st.z)?;
            for (b, a) in gl.bias.iter_mut().zip(&da) {
                *b += a;
            }
            // dz = Wᵀ da, split into input and recurrent parts
            let mut dz = vec![0.0; d + s];
            for (r, &a) in da.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (dzj, &w) in dz.iter_mut().zip(params.weights.row(r)) {
                    *dzj += a * w;
                }
            }
            dh_next.copy_from_slice(&dz[d..]);
            dx_seq[t].copy_from_slice(&dz[..d]);
        }
        dh_ext = dx_seq;
    }
    let d0 = stack.input_size();
    let mut dx = dh_ext;
    dx.resize(cache.capacity, vec![0.0; d0]);
    Ok((grads, dx))
}
