//! A compact multilingual transformer encoder classifier.
//!
//! Pre-norm encoder blocks (self-attention + FFN), learned positional
//! embeddings, a final layer norm, and a linear head over the first
//! position. The last block's FFN is the editable site: its keys/values
//! follow the `q . K + b_k` / `a . V + b_v` orientation so patch neurons
//! append cleanly.

mod checkpoint;
mod config;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use config::{ModelConfig, TrainConfig};
pub use train::{example_loss_and_grads, train_base, TrainOutcome};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::rng::{normal, seeded_rng};
use crate::numerics::tape::{layer_norm_row, softmax_in_place};
use crate::numerics::Matrix;
use crate::patching::{patched_ffn_rows, PatchBank};

/// Epsilon inside every layer-norm variance.
pub const LN_EPS: f64 = 1e-5;

/// A tokenized input; the first id is the classification sentinel.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSequence(pub Vec<u32>);

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn ids(&self) -> &[u32] {
        &self.0
    }

    pub fn validate(&self, vocab_size: usize, max_len: usize) -> Result<()> {
        if self.0.is_empty() {
            return Err(Error::Data("empty token sequence".to_string()));
        }
        if self.0.len() > max_len {
            return Err(Error::SequenceTooLong {
                len: self.0.len(),
                max_len,
            });
        }
        if let Some(bad) = self.0.iter().find(|&&id| id as usize >= vocab_size) {
            return Err(Error::Data(format!(
                "token id {bad} outside vocabulary of size {vocab_size}"
            )));
        }
        Ok(())
    }
}

/// One FFN layer read as a key-value memory: `keys` are the first linear
/// layer (d_model x d_ff), `values` the second (d_ff x d_model).
#[derive(Clone, Debug, PartialEq)]
pub struct FfnParams {
    pub keys: Matrix,
    pub key_bias: Matrix,
    pub values: Matrix,
    pub value_bias: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderLayer {
    pub wq: Matrix,
    pub bq: Matrix,
    /// No key bias: a per-row constant shift of the attention scores is
    /// invisible to softmax, so such a parameter would be gradient-free.
    pub wk: Matrix,
    pub wv: Matrix,
    pub bv: Matrix,
    pub wo: Matrix,
    pub bo: Matrix,
    pub ln1_gamma: Matrix,
    pub ln1_beta: Matrix,
    pub ln2_gamma: Matrix,
    pub ln2_beta: Matrix,
    pub ffn: FfnParams,
}

/// The full parameter set. Immutable during evaluation; training paths
/// take `&mut`.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub token_embedding: Matrix,
    pub position_embedding: Matrix,
    pub layers: Vec<EncoderLayer>,
    pub final_gamma: Matrix,
    pub final_beta: Matrix,
    pub head_weight: Matrix,
    pub head_bias: Matrix,
}

/// Per-position inputs to (and residual stream around) the last FFN layer.
///
/// `ffn_input` holds the exact q vectors the last FFN consumed; `residual`
/// is the stream the FFN output is added onto. Both are caller-owned.
#[derive(Clone, Debug)]
pub struct QCache {
    pub residual: Matrix,
    pub ffn_input: Matrix,
}

#[derive(Clone, Debug)]
pub struct ForwardPass {
    pub logits: Vec<f64>,
    pub cache: QCache,
}

/// Argmax with ties broken toward the lowest class index.
pub fn argmax_lowest(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate().skip(1) {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

/// Seeded parameter initialization; the same config yields a bit-identical
/// model. Draw order matches the canonical parameter order.
pub fn init_model(config: &ModelConfig) -> Result<Model> {
    config.validate()?;
    let mut rng = seeded_rng(config.seed);
    let d = config.d_model;

    let mut normal_matrix = |rows: usize, cols: usize, std: f64| {
        Matrix::from_fn(rows, cols, |_, _| normal(&mut rng, 0.0, std))
    };
    let xavier = |fan_in: usize, fan_out: usize| (2.0 / (fan_in + fan_out) as f64).sqrt();

    let token_embedding = normal_matrix(config.vocab_size, d, 0.02);
    let position_embedding = normal_matrix(config.max_len, d, 0.02);

    let mut layers = Vec::with_capacity(config.n_layers);
    for _ in 0..config.n_layers {
        let attn_std = xavier(d, d);
        let layer = EncoderLayer {
            wq: normal_matrix(d, d, attn_std),
            bq: Matrix::zeros(1, d),
            wk: normal_matrix(d, d, attn_std),
            wv: normal_matrix(d, d, attn_std),
            bv: Matrix::zeros(1, d),
            wo: normal_matrix(d, d, attn_std),
            bo: Matrix::zeros(1, d),
            ln1_gamma: Matrix::from_vec(1, d, vec![1.0; d]),
            ln1_beta: Matrix::zeros(1, d),
            ln2_gamma: Matrix::from_vec(1, d, vec![1.0; d]),
            ln2_beta: Matrix::zeros(1, d),
            ffn: FfnParams {
                keys: normal_matrix(d, config.d_ff, xavier(d, config.d_ff)),
                key_bias: Matrix::zeros(1, config.d_ff),
                values: normal_matrix(config.d_ff, d, xavier(config.d_ff, d)),
                value_bias: Matrix::zeros(1, d),
            },
        };
        layers.push(layer);
    }

    let final_gamma = Matrix::from_vec(1, d, vec![1.0; d]);
    let final_beta = Matrix::zeros(1, d);
    let head_weight = normal_matrix(d, config.n_classes, xavier(d, config.n_classes));
    let head_bias = Matrix::zeros(1, config.n_classes);

    Ok(Model {
        config: config.clone(),
        token_embedding,
        position_embedding,
        layers,
        final_gamma,
        final_beta,
        head_weight,
        head_bias,
    })
}

impl Model {
    /// Canonical parameter order used by the optimizer, the training tape,
    /// and the checkpoint format. Keep the three lists below in sync.
    pub fn param_refs(&self) -> Vec<&Matrix> {
        let mut out: Vec<&Matrix> = vec![&self.token_embedding, &self.position_embedding];
        for layer in &self.layers {
            out.extend([
                &layer.wq,
                &layer.bq,
                &layer.wk,
                &layer.wv,
                &layer.bv,
                &layer.wo,
                &layer.bo,
                &layer.ln1_gamma,
                &layer.ln1_beta,
                &layer.ln2_gamma,
                &layer.ln2_beta,
                &layer.ffn.keys,
                &layer.ffn.key_bias,
                &layer.ffn.values,
                &layer.ffn.value_bias,
            ]);
        }
        out.extend([
            &self.final_gamma,
            &self.final_beta,
            &self.head_weight,
            &self.head_bias,
        ]);
        out
    }

    pub fn param_refs_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out: Vec<&mut Matrix> =
            vec![&mut self.token_embedding, &mut self.position_embedding];
        for layer in &mut self.layers {
            out.extend([
                &mut layer.wq,
                &mut layer.bq,
                &mut layer.wk,
                &mut layer.wv,
                &mut layer.bv,
                &mut layer.wo,
                &mut layer.bo,
                &mut layer.ln1_gamma,
                &mut layer.ln1_beta,
                &mut layer.ln2_gamma,
                &mut layer.ln2_beta,
                &mut layer.ffn.keys,
                &mut layer.ffn.key_bias,
                &mut layer.ffn.values,
                &mut layer.ffn.value_bias,
            ]);
        }
        out.extend([
            &mut self.final_gamma,
            &mut self.final_beta,
            &mut self.head_weight,
            &mut self.head_bias,
        ]);
        out
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut out = vec![
            "token_embedding".to_string(),
            "position_embedding".to_string(),
        ];
        for li in 0..self.layers.len() {
            for name in [
                "wq", "bq", "wk", "wv", "bv", "wo", "bo", "ln1_gamma", "ln1_beta",
                "ln2_gamma", "ln2_beta", "ffn.keys", "ffn.key_bias", "ffn.values",
                "ffn.value_bias",
            ] {
                out.push(format!("layers[{li}].{name}"));
            }
        }
        out.extend([
            "final_gamma".to_string(),
            "final_beta".to_string(),
            "head_weight".to_string(),
            "head_bias".to_string(),
        ]);
        out
    }

    pub fn param_count(&self) -> usize {
        self.param_refs().iter().map(|m| m.len()).sum()
    }

    pub fn last_layer(&self) -> &EncoderLayer {
        self.layers.last().expect("n_layers >= 1")
    }

    pub fn last_layer_index(&self) -> usize {
        self.layers.len() - 1
    }

    /// Runs the encoder up to (but not through) the last FFN sublayer.
    ///
    /// Returns the residual stream entering that sublayer and the
    /// normalized q rows the FFN will consume.
    pub fn encode_lower(&self, x: &TokenSequence) -> Result<QCache> {
        x.validate(self.config.vocab_size, self.config.max_len)?;
        let seq_len = x.len();
        let d = self.config.d_model;

        let mut state = Matrix::zeros(seq_len, d);
        for (pos, &id) in x.ids().iter().enumerate() {
            let tok = self.token_embedding.row(id as usize);
            let pe = self.position_embedding.row(pos);
            for (o, (t, p)) in state.row_mut(pos).iter_mut().zip(tok.iter().zip(pe)) {
                *o = t + p;
            }
        }

        let last = self.last_layer_index();
        for (li, layer) in self.layers.iter().enumerate() {
            let h1 = layer_norm_matrix(&state, &layer.ln1_gamma, &layer.ln1_beta);
            let attn = self.attention(&h1, layer);
            state.add_assign(&attn);

            let h2 = layer_norm_matrix(&state, &layer.ln2_gamma, &layer.ln2_beta);
            if li == last {
                return Ok(QCache {
                    residual: state,
                    ffn_input: h2,
                });
            }
            let ffn_out = ffn_rows(&h2, &layer.ffn, self.config.activation);
            state.add_assign(&ffn_out);
        }
        unreachable!("loop always returns at the last layer");
    }

    fn attention(&self, h: &Matrix, layer: &EncoderLayer) -> Matrix {
        let seq_len = h.rows();
        let d = self.config.d_model;
        let heads = self.config.n_heads;
        let hd = self.config.head_dim();
        let scale = 1.0 / (hd as f64).sqrt();

        let q = h.matmul(&layer.wq).add_row_broadcast(&layer.bq);
        let k = h.matmul(&layer.wk);
        let v = h.matmul(&layer.wv).add_row_broadcast(&layer.bv);

        let mut ctx = Matrix::zeros(seq_len, d);
        for head in 0..heads {
            let off = head * hd;
            let mut scores = Matrix::zeros(seq_len, seq_len);
            for i in 0..seq_len {
                let qi = &q.row(i)[off..off + hd];
                for j in 0..seq_len {
                    let kj = &k.row(j)[off..off + hd];
                    let s: f64 = qi.iter().zip(kj).map(|(a, b)| a * b).sum();
                    scores.set(i, j, s * scale);
                }
            }
            for i in 0..seq_len {
                softmax_in_place(scores.row_mut(i));
            }
            for i in 0..seq_len {
                for j in 0..seq_len {
                    let w = scores.get(i, j);
                    if w == 0.0 {
                        continue;
                    }
                    let vj = &v.row(j)[off..off + hd];
                    for (o, val) in ctx.row_mut(i)[off..off + hd].iter_mut().zip(vj) {
                        *o += w * val;
                    }
                }
            }
        }
        ctx.matmul(&layer.wo).add_row_broadcast(&layer.bo)
    }

    /// Maps the last-FFN residual/q pair to logits through the (possibly
    /// patched) FFN, the final norm, and the head. Shared by `forward` and
    /// the editing fast path so both produce identical floats.
    pub fn logits_from_cache(&self, cache: &QCache, bank: Option<&PatchBank>) -> Vec<f64> {
        let ffn_out = patched_ffn_rows(
            &cache.ffn_input,
            &self.last_layer().ffn,
            bank,
            self.config.activation,
        );
        let row0 = {
            let mut row = cache.residual.row(0).to_vec();
            for (o, f) in row.iter_mut().zip(ffn_out.row(0)) {
                *o += f;
            }
            row
        };
        self.logits_from_prehead_row(&row0)
    }

    /// Final layer norm + classification head applied to one pre-norm row.
    pub fn logits_from_prehead_row(&self, row: &[f64]) -> Vec<f64> {
        let mut normed = vec![0.0; row.len()];
        layer_norm_row(
            row,
            self.final_gamma.row(0),
            self.final_beta.row(0),
            LN_EPS,
            &mut normed,
        );
        let normed = Matrix::row_vector(normed);
        let logits = normed
            .matmul(&self.head_weight)
            .add_row_broadcast(&self.head_bias);
        logits.row(0).to_vec()
    }

    /// Full forward pass; with a patch bank the last FFN runs the extended
    /// forward, without one it runs the plain key-value forward. The
    /// returned cache holds the exact q vectors the last FFN consumed.
    pub fn forward(&self, x: &TokenSequence, bank: Option<&PatchBank>) -> Result<ForwardPass> {
        let cache = self.encode_lower(x)?;
        let logits = self.logits_from_cache(&cache, bank);
        Ok(ForwardPass { logits, cache })
    }

    pub fn predict(&self, x: &TokenSequence, bank: Option<&PatchBank>) -> Result<usize> {
        Ok(argmax_lowest(&self.forward(x, bank)?.logits))
    }
}

/// Layer norm applied row-wise with shared row kernel.
pub fn layer_norm_matrix(x: &Matrix, gamma: &Matrix, beta: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for r in 0..x.rows() {
        layer_norm_row(x.row(r), gamma.row(0), beta.row(0), LN_EPS, out.row_mut(r));
    }
    out
}

/// Plain FFN applied to each row of `q`.
pub fn ffn_rows(q: &Matrix, ffn: &FfnParams, act: crate::numerics::Activation) -> Matrix {
    let mut out = Matrix::zeros(q.rows(), ffn.values.cols());
    for r in 0..q.rows() {
        let row = crate::patching::ffn_forward(q.row(r), ffn, act);
        out.row_mut(r).copy_from_slice(&row);
    }
    out
}
