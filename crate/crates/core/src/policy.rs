//! The Q-value policy network: a frozen contextual encoder feeds a
//! trainable two-head attention block, whose final-position output is
//! projected through a frozen vocabulary head to per-token logits. A
//! column's Q-value is the mean logit over its name's tokens.
//!
//! Only the attention block trains; gradients are analytic and verified
//! against central finite differences in the test suite.

use std::collections::HashMap;

use ndarray::{s, Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("column name {0:?} tokenizes to zero tokens")]
    EmptyColumnName(String),
    #[error("empty state")]
    EmptyState,
    #[error("empty action list")]
    EmptyActions,
    #[error("action index {index} out of range for {actions} actions")]
    ActionOutOfRange { index: usize, actions: usize },
    #[error("non-finite gradients; optimizer step rejected")]
    NonFiniteGradients,
    #[error("empty batch")]
    EmptyBatch,
    #[error("encoder source: {0}")]
    EncoderSource(String),
}

/// Whitespace-plus-punctuation tokenizer over a closed vocabulary built
/// from the dataset's column names and description. Unknown tokens map
/// deterministically into the existing vocabulary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Tokenizer {
    vocab: Vec<String>,
    index: HashMap<String, usize>,
}

fn split_tokens(text: &str) -> impl Iterator<Item = &str> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '_'))
        .filter(|t| !t.is_empty())
}

impl Tokenizer {
    pub fn from_texts<'a, I: IntoIterator<Item = &'a str>>(texts: I) -> Self {
        let mut vocab = Vec::new();
        let mut index = HashMap::new();
        for text in texts {
            for token in split_tokens(text) {
                if !index.contains_key(token) {
                    index.insert(token.to_string(), vocab.len());
                    vocab.push(token.to_string());
                }
            }
        }
        Tokenizer { vocab, index }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn tokenize(&self, text: &str) -> Vec<usize> {
        split_tokens(text)
            .map(|t| match self.index.get(t) {
                Some(&id) => id,
                None => {
                    // deterministic fallback bucket for out-of-vocabulary tokens
                    let h = t
                        .bytes()
                        .fold(1469598103934665603u64, |h, b| {
                            (h ^ b as u64).wrapping_mul(1099511628211)
                        });
                    (h % self.vocab.len() as u64) as usize
                }
            })
            .collect()
    }
}

fn seeded_matrix(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-scale..scale))
}

/// Frozen deterministic encoder: a seeded token embedding followed by a
/// seeded recurrent mixer, so the hidden state at each position depends on
/// the whole prefix (column order changes the representation). Pretrained
/// transformer layers can replace it behind the same interface.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncoderStack {
    embedding: Array2<f64>,
    w_hidden: Array2<f64>,
    w_input: Array2<f64>,
    bias: Array1<f64>,
}

impl EncoderStack {
    pub fn seeded(vocab_size: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x656e_636f_6465_7221);
        let scale = 1.0 / (dim as f64).sqrt();
        EncoderStack {
            embedding: seeded_matrix(vocab_size, dim, 1.0, &mut rng),
            w_hidden: seeded_matrix(dim, dim, scale, &mut rng),
            w_input: seeded_matrix(dim, dim, scale, &mut rng),
            bias: Array1::from_shape_fn(dim, |_| rng.gen_range(-scale..scale)),
        }
    }

    /// Seeded mixing layers over token embeddings fetched from an embedder
    /// (e.g. a remote activation service). One request per vocabulary
    /// token, in token-id order.
    pub fn from_embedder(
        embedder: &dyn crate::embed::Embedder,
        vocab_tokens: &[String],
        seed: u64,
    ) -> Result<Self, PolicyError> {
        let dim = embedder.dimension();
        let mut embedding = Array2::zeros((vocab_tokens.len(), dim));
        for (i, token) in vocab_tokens.iter().enumerate() {
            let v = embedder
                .embed(token)
                .map_err(|e| PolicyError::EncoderSource(e.to_string()))?;
            if v.values.len() != dim {
                return Err(PolicyError::EncoderSource(format!(
                    "activation dimension {} != {dim}",
                    v.values.len()
                )));
            }
            embedding
                .row_mut(i)
                .assign(&Array1::from_vec(v.values.clone()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x656e_636f_6465_7221);
        let scale = 1.0 / (dim as f64).sqrt();
        // keep the rng call order of `seeded` so the mixing layers match
        let _ = seeded_matrix(vocab_tokens.len(), dim, 1.0, &mut rng);
        Ok(EncoderStack {
            embedding,
            w_hidden: seeded_matrix(dim, dim, scale, &mut rng),
            w_input: seeded_matrix(dim, dim, scale, &mut rng),
            bias: Array1::from_shape_fn(dim, |_| rng.gen_range(-scale..scale)),
        })
    }

    /// Load frozen encoder weights from a JSON file written by `save`.
    pub fn from_file(path: &std::path::Path) -> Result<Self, PolicyError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PolicyError::EncoderSource(format!("{}: {e}", path.display())))?;
        let stack: EncoderStack = serde_json::from_str(&text)
            .map_err(|e| PolicyError::EncoderSource(format!("{}: {e}", path.display())))?;
        let dim = stack.dim();
        if stack.w_hidden.raw_dim() != ndarray::Dim([dim, dim])
            || stack.w_input.raw_dim() != ndarray::Dim([dim, dim])
            || stack.bias.len() != dim
        {
            return Err(PolicyError::EncoderSource(format!(
                "{}: inconsistent weight shapes",
                path.display()
            )));
        }
        Ok(stack)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), PolicyError> {
        let text = serde_json::to_string(self)
            .map_err(|e| PolicyError::EncoderSource(e.to_string()))?;
        std::fs::write(path, text)
            .map_err(|e| PolicyError::EncoderSource(format!("{}: {e}", path.display())))
    }

    pub fn dim(&self) -> usize {
        self.embedding.ncols()
    }

    /// Token-id sequence → hidden matrix (sequence length × dim).
    pub fn encode(&self, tokens: &[usize]) -> Array2<f64> {
        let dim = self.dim();
        let mut hidden = Array2::zeros((tokens.len(), dim));
        let mut prev = Array1::zeros(dim);
        for (t, &id) in tokens.iter().enumerate() {
            let x = self.embedding.row(id % self.embedding.nrows());
            let mut h = prev.dot(&self.w_hidden) + x.dot(&self.w_input) + &self.bias;
            h.mapv_inplace(f64::tanh);
            hidden.row_mut(t).assign(&h);
            prev = h;
        }
        hidden
    }
}

/// Frozen map from the final-position hidden vector to per-token logits.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VocabProjection {
    pub matrix: Array2<f64>,
}

impl VocabProjection {
    pub fn seeded(dim: usize, vocab_size: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x766f_6361_6221);
        // Large frozen readout scale: the trainable attention parameters sit
        // behind this projection, so its magnitude sets how far a fixed-size
        // optimizer step can move a Q-value. Small scales make the pinned
        // learning rate far too slow to converge within the episode budget.
        let scale = 32.0 / (dim as f64).sqrt();
        VocabProjection {
            matrix: seeded_matrix(dim, vocab_size, scale, &mut rng),
        }
    }
}

/// The per-tensor container shared by parameter values, gradients, and the
/// optimizer's moment accumulators. Two heads, each with query/key/value
/// projections of shape (dim × dim/2), plus one (dim × dim) output
/// projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamTensors {
    pub head_qkv: Vec<[Array2<f64>; 3]>,
    pub w_out: Array2<f64>,
}

impl ParamTensors {
    pub fn zeros(dim: usize, heads: usize) -> Self {
        let head_dim = dim / heads;
        ParamTensors {
            head_qkv: (0..heads)
                .map(|_| {
                    [
                        Array2::zeros((dim, head_dim)),
                        Array2::zeros((dim, head_dim)),
                        Array2::zeros((dim, head_dim)),
                    ]
                })
                .collect(),
            w_out: Array2::zeros((dim, dim)),
        }
    }

    pub fn seeded(dim: usize, heads: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6174_746e_2121);
        let head_dim = dim / heads;
        let scale = 1.0 / (dim as f64).sqrt();
        ParamTensors {
            head_qkv: (0..heads)
                .map(|_| {
                    [
                        seeded_matrix(dim, head_dim, scale, &mut rng),
                        seeded_matrix(dim, head_dim, scale, &mut rng),
                        seeded_matrix(dim, head_dim, scale, &mut rng),
                    ]
                })
                .collect(),
            w_out: seeded_matrix(dim, dim, scale, &mut rng),
        }
    }

    pub fn tensors(&self) -> Vec<&Array2<f64>> {
        self.head_qkv
            .iter()
            .flat_map(|h| h.iter())
            .chain(std::iter::once(&self.w_out))
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        self.head_qkv
            .iter_mut()
            .flat_map(|h| h.iter_mut())
            .chain(std::iter::once(&mut self.w_out))
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|x| x.is_finite()))
    }
}

/// The only trainable weights in the system, with their optimizer state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttentionParams {
    pub tensors: ParamTensors,
    pub first_moment: ParamTensors,
    pub second_moment: ParamTensors,
    pub step: u64,
    pub dim: usize,
    pub heads: usize,
}

impl AttentionParams {
    pub fn seeded(dim: usize, heads: usize, seed: u64) -> Self {
        assert!(dim % heads == 0, "dim must be divisible by head count");
        AttentionParams {
            tensors: ParamTensors::seeded(dim, heads, seed),
            first_moment: ParamTensors::zeros(dim, heads),
            second_moment: ParamTensors::zeros(dim, heads),
            step: 0,
            dim,
            heads,
        }
    }
}

/// Numerically stable softmax (max subtraction).
pub fn action_distribution(q: &[f64]) -> Result<Vec<f64>, PolicyError> {
    if q.is_empty() {
        return Err(PolicyError::EmptyActions);
    }
    let max = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = q.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.iter().map(|e| e / total).collect())
}

fn softmax_rows(z: &Array2<f64>) -> Array2<f64> {
    let mut out = z.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|x| (x - max).exp());
        let total = row.sum();
        row.mapv_inplace(|x| x / total);
    }
    out
}

struct HeadForward {
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    weights: Array2<f64>,
}

struct Forward {
    hidden: Array2<f64>,
    heads: Vec<HeadForward>,
    concat: Array2<f64>,
    logits: Array1<f64>,
}

/// One element of a regression batch.
#[derive(Debug, Clone)]
pub struct BatchItem {
    pub state_tokens: Vec<usize>,
    /// Token ids of the chosen column's name.
    pub action_tokens: Vec<usize>,
    pub target: f64,
}

/// Frozen encoder + projection + tokenizer bundle. The trainable
/// `AttentionParams` are passed in, so forward passes stay pure.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyNetwork {
    pub tokenizer: Tokenizer,
    pub encoder: EncoderStack,
    pub projection: VocabProjection,
}

impl PolicyNetwork {
    /// Desk-scale network: vocabulary from the given texts, seeded frozen
    /// encoder and projection.
    pub fn seeded<'a, I: IntoIterator<Item = &'a str>>(texts: I, dim: usize, seed: u64) -> Self {
        let tokenizer = Tokenizer::from_texts(texts);
        let vocab = tokenizer.vocab_size().max(1);
        PolicyNetwork {
            tokenizer,
            encoder: EncoderStack::seeded(vocab, dim, seed),
            projection: VocabProjection::seeded(dim, vocab, seed),
        }
    }

    pub fn new_params(&self, heads: usize, seed: u64) -> AttentionParams {
        AttentionParams::seeded(self.encoder.dim(), heads, seed)
    }

    fn forward(&self, state_tokens: &[usize], params: &AttentionParams) -> Forward {
        let hidden = self.encoder.encode(state_tokens);
        let t = hidden.nrows();
        let dim = params.dim;
        let head_dim = dim / params.heads;
        let mut heads = Vec::with_capacity(params.heads);
        let mut concat = Array2::zeros((t, dim));
        for (h, qkv) in params.tensors.head_qkv.iter().enumerate() {
            let q = hidden.dot(&qkv[0]);
            let k = hidden.dot(&qkv[1]);
            let v = hidden.dot(&qkv[2]);
            let scores = q.dot(&k.t()) / (head_dim as f64).sqrt();
            let weights = softmax_rows(&scores);
            let attended = weights.dot(&v);
            concat
                .slice_mut(s![.., h * head_dim..(h + 1) * head_dim])
                .assign(&attended);
            heads.push(HeadForward { q, k, v, weights });
        }
        let output = concat.dot(&params.tensors.w_out);
        let last = output.row(t - 1).to_owned();
        let logits = last.dot(&self.projection.matrix);
        Forward {
            hidden,
            heads,
            concat,
            logits,
        }
    }

    /// Per-token logits at the final state position.
    pub fn logits(
        &self,
        state_tokens: &[usize],
        params: &AttentionParams,
    ) -> Result<Vec<f64>, PolicyError> {
        if state_tokens.is_empty() {
            return Err(PolicyError::EmptyState);
        }
        Ok(self.forward(state_tokens, params).logits.to_vec())
    }

    /// Q-value per action column: the mean logit over the column name's
    /// tokens.
    pub fn q_vector(
        &self,
        state_tokens: &[usize],
        actions: &[String],
        params: &AttentionParams,
    ) -> Result<Vec<f64>, PolicyError> {
        if state_tokens.is_empty() {
            return Err(PolicyError::EmptyState);
        }
        if actions.is_empty() {
            return Err(PolicyError::EmptyActions);
        }
        let logits = self.forward(state_tokens, params).logits;
        actions
            .iter()
            .map(|name| {
                let tokens = self.tokenizer.tokenize(name);
                if tokens.is_empty() {
                    return Err(PolicyError::EmptyColumnName(name.clone()));
                }
                Ok(tokens.iter().map(|&id| logits[id]).sum::<f64>() / tokens.len() as f64)
            })
            .collect()
    }

    fn q_for_item(&self, forward: &Forward, action_tokens: &[usize]) -> f64 {
        action_tokens
            .iter()
            .map(|&id| forward.logits[id])
            .sum::<f64>()
            / action_tokens.len() as f64
    }

    /// Mean squared error of q(s, a) against the targets, with analytic
    /// gradients for the attention parameters only.
    pub fn loss_and_grads(
        &self,
        batch: &[BatchItem],
        params: &AttentionParams,
    ) -> Result<(f64, ParamTensors), PolicyError> {
        if batch.is_empty() {
            return Err(PolicyError::EmptyBatch);
        }
        let dim = params.dim;
        let head_dim = dim / params.heads;
        let mut grads = ParamTensors::zeros(dim, params.heads);
        let mut loss = 0.0;
        let scale = 1.0 / batch.len() as f64;
        for item in batch {
            if item.state_tokens.is_empty() {
                return Err(PolicyError::EmptyState);
            }
            if item.action_tokens.is_empty() {
                return Err(PolicyError::EmptyColumnName(String::new()));
            }
            let fwd = self.forward(&item.state_tokens, params);
            let q = self.q_for_item(&fwd, &item.action_tokens);
            let err = q - item.target;
            loss += err * err * scale;

            // dL/dq = 2 err / B; dq/dlogit[y] = 1/n per action token
            let dq = 2.0 * err * scale;
            let vocab = fwd.logits.len();
            let mut dlogits = Array1::zeros(vocab);
            let per_token = dq / item.action_tokens.len() as f64;
            for &id in &item.action_tokens {
                dlogits[id] += per_token;
            }
            // logits = last . P  =>  dlast = P dlogits
            let dlast = self.projection.matrix.dot(&dlogits);
            let t = fwd.hidden.nrows();
            let mut d_output = Array2::zeros((t, dim));
            d_output.row_mut(t - 1).assign(&dlast);

            // output = concat . w_out
            grads.w_out += &fwd.concat.t().dot(&d_output);
            let d_concat = d_output.dot(&params.tensors.w_out.t());

            for (h, head) in fwd.heads.iter().enumerate() {
                let d_attended = d_concat
                    .slice(s![.., h * head_dim..(h + 1) * head_dim])
                    .to_owned();
                // attended = weights . v
                let d_weights = d_attended.dot(&head.v.t());
                let d_v = head.weights.t().dot(&d_attended);
                // softmax backward per row
                let row_dot = (&d_weights * &head.weights)
                    .sum_axis(Axis(1))
                    .insert_axis(Axis(1));
                let d_scores = &head.weights * &(&d_weights - &row_dot);
                let inv_sqrt = 1.0 / (head_dim as f64).sqrt();
                let d_q = d_scores.dot(&head.k) * inv_sqrt;
                let d_k = d_scores.t().dot(&head.q) * inv_sqrt;
                let g = &mut grads.head_qkv[h];
                g[0] += &fwd.hidden.t().dot(&d_q);
                g[1] += &fwd.hidden.t().dot(&d_k);
                g[2] += &fwd.hidden.t().dot(&d_v);
            }
        }
        Ok((loss, grads))
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Bias-corrected adaptive-moment update on the attention parameters.
/// Rejects non-finite gradients without touching the parameters.
pub fn optimizer_step(
    params: &mut AttentionParams,
    grads: &ParamTensors,
    learning_rate: f64,
) -> Result<(), PolicyError> {
    if !grads.is_finite() {
        return Err(PolicyError::NonFiniteGradients);
    }
    params.step += 1;
    let t = params.step as i32;
    let bias1 = 1.0 - ADAM_BETA1.powi(t);
    let bias2 = 1.0 - ADAM_BETA2.powi(t);
    let tensors = params.tensors.tensors_mut();
    let moments1 = params.first_moment.tensors_mut();
    let moments2 = params.second_moment.tensors_mut();
    for (((p, m), v), g) in tensors
        .into_iter()
        .zip(moments1)
        .zip(moments2)
        .zip(grads.tensors())
    {
        m.zip_mut_with(g, |m, g| *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g);
        v.zip_mut_with(g, |v, g| *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g);
        ndarray::Zip::from(&mut *p)
            .and(&*m)
            .and(&*v)
            .for_each(|p, m, v| {
                let m_hat = m / bias1;
                let v_hat = v / bias2;
                *p -= learning_rate * m_hat / (v_hat.sqrt() + ADAM_EPS);
            });
    }
    Ok(())
}
