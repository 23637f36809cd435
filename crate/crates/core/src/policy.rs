//! One-hidden-layer autoregressive softmax policy.
//!
//! At step `t` the input is `[onehot(prompt slot), onehot(previous token)]`
//! where the previous-token block is all zeros at `t = 0` (BOS). Then
//! `h = tanh(W_in x + b_in)`, `logits = W_out h + b_out`, `a ~ softmax(logits)`.
//!
//! Parameters live in one flat buffer so aggregation is a plain weighted sum
//! over slices; the block order is `W_in, b_in, W_out, b_out`, matrices
//! row-major.

use alloc::vec;
use alloc::vec::Vec;

use crate::envs::{Completion, TaskSpec, Token};
use crate::error::{invalid, Result};
use crate::numeric::{softmax_into, RngStream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PolicyShape {
    pub prompt_dim: usize,
    pub vocab_size: usize,
    pub hidden_dim: usize,
}

impl PolicyShape {
    pub fn new(prompt_dim: usize, vocab_size: usize, hidden_dim: usize) -> Self {
        Self {
            prompt_dim,
            vocab_size,
            hidden_dim,
        }
    }

    pub fn for_task(task: &TaskSpec, hidden_dim: usize) -> Self {
        Self::new(task.prompt_dim, task.vocab_size, hidden_dim)
    }

    pub fn input_dim(&self) -> usize {
        self.prompt_dim + self.vocab_size
    }

    fn w_in_len(&self) -> usize {
        self.hidden_dim * self.input_dim()
    }

    pub fn b_in_offset(&self) -> usize {
        self.w_in_len()
    }

    pub fn w_out_offset(&self) -> usize {
        self.b_in_offset() + self.hidden_dim
    }

    pub fn b_out_offset(&self) -> usize {
        self.w_out_offset() + self.vocab_size * self.hidden_dim
    }

    /// Total number of scalars.
    pub fn len(&self) -> usize {
        self.b_out_offset() + self.vocab_size
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(name, offset, len)` for each block, in storage order.
    pub fn blocks(&self) -> [(&'static str, usize, usize); 4] {
        [
            ("w_in", 0, self.w_in_len()),
            ("b_in", self.b_in_offset(), self.hidden_dim),
            ("w_out", self.w_out_offset(), self.vocab_size * self.hidden_dim),
            ("b_out", self.b_out_offset(), self.vocab_size),
        ]
    }
}

/// Policy parameters (value semantics; each client works on its own copy).
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams {
    shape: PolicyShape,
    data: Vec<f64>,
}

impl PolicyParams {
    pub fn zeros(shape: PolicyShape) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.len()],
        }
    }

    /// Weights uniform in `(-0.1, 0.1)`, biases zero.
    pub fn init(shape: PolicyShape, rng: &mut RngStream) -> Self {
        let mut p = Self::zeros(shape);
        for (_, off, len) in [shape.blocks()[0], shape.blocks()[2]] {
            for w in &mut p.data[off..off + len] {
                *w = rng.uniform_range(-0.1, 0.1);
            }
        }
        p
    }

    pub fn from_flat(shape: PolicyShape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(invalid!(
                "flat parameter length {} does not match shape length {}",
                data.len(),
                shape.len()
            ));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(invalid!("non-finite parameter value"));
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> PolicyShape {
        self.shape
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Row `r` of `W_out`.
    pub fn w_out_row(&self, r: usize) -> &[f64] {
        let h = self.shape.hidden_dim;
        let off = self.shape.w_out_offset() + r * h;
        &self.data[off..off + h]
    }

    pub fn w_out_row_mut(&mut self, r: usize) -> &mut [f64] {
        let h = self.shape.hidden_dim;
        let off = self.shape.w_out_offset() + r * h;
        &mut self.data[off..off + h]
    }

    pub fn b_out_mut(&mut self) -> &mut [f64] {
        let off = self.shape.b_out_offset();
        &mut self.data[off..off + self.shape.vocab_size]
    }

    /// `theta -= lr * grad`
    pub fn descend(&mut self, grad: &[f64], lr: f64) {
        for (p, g) in self.data.iter_mut().zip(grad) {
            *p -= lr * g;
        }
    }

    /// Hidden activations and logits for one step.
    pub fn forward(&self, slot: usize, prev: Option<Token>, hidden: &mut Vec<f64>, logits: &mut Vec<f64>) {
        let s = self.shape;
        let input = s.input_dim();
        let b_in = &self.data[s.b_in_offset()..s.b_in_offset() + s.hidden_dim];
        hidden.clear();
        for j in 0..s.hidden_dim {
            let row = j * input;
            let mut z = b_in[j] + self.data[row + slot];
            if let Some(p) = prev {
                z += self.data[row + s.prompt_dim + p];
            }
            hidden.push(libm::tanh(z));
        }
        let b_out = &self.data[s.b_out_offset()..s.b_out_offset() + s.vocab_size];
        logits.clear();
        for (v, &b) in b_out.iter().enumerate() {
            let w = self.w_out_row(v);
            logits.push(b + w.iter().zip(hidden.iter()).fold(0.0, |acc, (a, h)| acc + a * h));
        }
    }

    /// Log-likelihood of a fixed token sequence, recomputed from scratch.
    pub fn sequence_log_prob(&self, slot: usize, tokens: &[Token]) -> f64 {
        let mut hidden = Vec::new();
        let mut logits = Vec::new();
        let mut probs = Vec::new();
        let mut prev = None;
        let mut total = 0.0;
        for &a in tokens {
            self.forward(slot, prev, &mut hidden, &mut logits);
            softmax_into(&logits, &mut probs);
            total += libm::log(probs[a]);
            prev = Some(a);
        }
        total
    }
}

/// A completion together with the activations recorded while sampling it.
#[derive(Clone, Debug)]
pub struct SampledCompletion {
    pub completion: Completion,
    /// One-hot prompt slot the completion was conditioned on.
    pub slot: usize,
    /// `log pi(a_t | s_t)` per step.
    pub log_probs: Vec<f64>,
    /// Post-tanh hidden activations, `steps x hidden_dim`.
    pub hidden: Vec<f64>,
    /// Action distributions, `steps x vocab_size`.
    pub probs: Vec<f64>,
}

impl SampledCompletion {
    pub fn len(&self) -> usize {
        self.completion.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.completion.tokens.is_empty()
    }
}

/// Draw a completion of exactly `task.max_len` tokens.
pub fn sample(params: &PolicyParams, task: &TaskSpec, prompt_id: usize, rng: &mut RngStream) -> Result<SampledCompletion> {
    if prompt_id >= task.prompt_count() {
        return Err(invalid!("prompt id {prompt_id} unknown to task '{}'", task.label));
    }
    let s = params.shape();
    if s.vocab_size != task.vocab_size || s.prompt_dim != task.prompt_dim {
        return Err(invalid!("policy shape {s:?} does not fit task '{}'", task.label));
    }
    let slot = task.prompt_slot[prompt_id];
    let steps = task.max_len;

    let mut out = SampledCompletion {
        completion: Completion {
            prompt_id,
            tokens: Vec::with_capacity(steps),
        },
        slot,
        log_probs: Vec::with_capacity(steps),
        hidden: Vec::with_capacity(steps * s.hidden_dim),
        probs: Vec::with_capacity(steps * s.vocab_size),
    };
    let mut hidden = Vec::with_capacity(s.hidden_dim);
    let mut logits = Vec::with_capacity(s.vocab_size);
    let mut probs = Vec::with_capacity(s.vocab_size);
    let mut prev = None;
    for _ in 0..steps {
        params.forward(slot, prev, &mut hidden, &mut logits);
        softmax_into(&logits, &mut probs);
        let a = rng.categorical(&probs);
        out.completion.tokens.push(a);
        out.log_probs.push(libm::log(probs[a]));
        out.hidden.extend_from_slice(&hidden);
        out.probs.extend_from_slice(&probs);
        prev = Some(a);
    }
    Ok(out)
}

/// Mean gradient of a loss with respect to the post-activation hidden layer.
#[derive(Clone, Debug, PartialEq)]
pub struct HiddenGradient(pub Vec<f64>);

impl HiddenGradient {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

fn check_batch(params: &PolicyParams, batch: &[SampledCompletion], advantages: &[f64]) -> Result<()> {
    if batch.len() != advantages.len() {
        return Err(invalid!(
            "{} advantages for {} completions",
            advantages.len(),
            batch.len()
        ));
    }
    if batch.is_empty() {
        return Err(invalid!("empty batch"));
    }
    let s = params.shape();
    for c in batch {
        let t = c.len();
        if c.hidden.len() != t * s.hidden_dim || c.probs.len() != t * s.vocab_size || c.log_probs.len() != t {
            return Err(invalid!("completion cache does not match policy shape"));
        }
    }
    if let Some(a) = advantages.iter().find(|a| !a.is_finite()) {
        return Err(invalid!("non-finite advantage {a}"));
    }
    Ok(())
}

fn pair_count(batch: &[SampledCompletion]) -> usize {
    batch.iter().map(SampledCompletion::len).sum()
}

/// Gradient of `L = -(1/N) sum_i A_i sum_t log pi(a_t | s_t)` with respect to
/// all parameters, plus the hidden-layer gradient averaged over every
/// (completion, timestep) pair.
///
/// The hidden average is taken over per-pair terms `-A_i d log pi / dh`, i.e.
/// the tied-layer gradient `dL/dh` rescaled by `N / pairs`.
pub fn surrogate_gradient(
    params: &PolicyParams,
    batch: &[SampledCompletion],
    advantages: &[f64],
) -> Result<(Vec<f64>, HiddenGradient)> {
    check_batch(params, batch, advantages)?;
    let s = params.shape();
    let (hd, vs, input) = (s.hidden_dim, s.vocab_size, s.input_dim());
    let n = batch.len() as f64;
    let pairs = pair_count(batch);

    let mut grad = vec![0.0; s.len()];
    let mut hidden_sum = vec![0.0; hd];
    let mut dlogits = vec![0.0; vs];
    let mut dz = vec![0.0; hd];

    for (c, &adv) in batch.iter().zip(advantages) {
        if adv == 0.0 {
            continue;
        }
        let scale = adv / n;
        let mut prev: Option<Token> = None;
        for (t, &a) in c.completion.tokens.iter().enumerate() {
            let h = &c.hidden[t * hd..(t + 1) * hd];
            let p = &c.probs[t * vs..(t + 1) * vs];
            for v in 0..vs {
                dlogits[v] = scale * p[v];
            }
            dlogits[a] -= scale;

            // output layer
            let b_out = s.b_out_offset();
            for v in 0..vs {
                let d = dlogits[v];
                grad[b_out + v] += d;
                let row = s.w_out_offset() + v * hd;
                for j in 0..hd {
                    grad[row + j] += d * h[j];
                }
            }
            // back into the hidden layer
            dz.iter_mut().for_each(|x| *x = 0.0);
            for v in 0..vs {
                let d = dlogits[v];
                for (dzj, w) in dz.iter_mut().zip(params.w_out_row(v)) {
                    *dzj += d * w;
                }
            }
            for j in 0..hd {
                hidden_sum[j] += dz[j];
                dz[j] *= 1.0 - h[j] * h[j];
            }
            let b_in = s.b_in_offset();
            for j in 0..hd {
                let row = j * input;
                grad[row + c.slot] += dz[j];
                if let Some(pv) = prev {
                    grad[row + s.prompt_dim + pv] += dz[j];
                }
                grad[b_in + j] += dz[j];
            }
            prev = Some(a);
        }
    }

    let rescale = n / pairs as f64;
    for x in &mut hidden_sum {
        *x *= rescale;
    }
    Ok((grad, HiddenGradient(hidden_sum)))
}

/// Per-completion hidden directions `v_i = sum_t W_out^T (p_t - e_{a_t})`.
///
/// Any hidden gradient over the batch is `(1/pairs) sum_i A_i v_i`, so one
/// pass here serves every per-objective loss.
pub fn hidden_directions(params: &PolicyParams, batch: &[SampledCompletion]) -> Vec<Vec<f64>> {
    let s = params.shape();
    let (hd, vs) = (s.hidden_dim, s.vocab_size);
    batch
        .iter()
        .map(|c| {
            let mut dir = vec![0.0; hd];
            for (t, &a) in c.completion.tokens.iter().enumerate() {
                let p = &c.probs[t * vs..(t + 1) * vs];
                for v in 0..vs {
                    let d = if v == a { p[v] - 1.0 } else { p[v] };
                    for (x, w) in dir.iter_mut().zip(params.w_out_row(v)) {
                        *x += d * w;
                    }
                }
            }
            dir
        })
        .collect()
}

/// Hidden gradient of `L_k` from precomputed directions.
pub fn hidden_gradient(directions: &[Vec<f64>], advantages: &[f64], pairs: usize) -> Result<HiddenGradient> {
    if directions.len() != advantages.len() {
        return Err(invalid!(
            "{} advantages for {} completions",
            advantages.len(),
            directions.len()
        ));
    }
    let dim = directions.first().map_or(0, Vec::len);
    let mut g = vec![0.0; dim];
    if pairs == 0 {
        return Ok(HiddenGradient(g));
    }
    for (dir, &a) in directions.iter().zip(advantages) {
        if a != 0.0 {
            for (x, d) in g.iter_mut().zip(dir) {
                *x += a * d;
            }
        }
    }
    let inv = 1.0 / pairs as f64;
    for x in &mut g {
        *x *= inv;
    }
    Ok(HiddenGradient(g))
}

pub(crate) fn batch_pairs(batch: &[SampledCompletion]) -> usize {
    pair_count(batch)
}
