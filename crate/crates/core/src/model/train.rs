//! Base-model training.
//!
//! Full-model cross-entropy training on the multilingual training split;
//! the checkpoint with the best English validation accuracy wins. This is
//! the only place the full-model tape is used — patch training later runs
//! on the frozen tail alone.

use rand::seq::SliceRandom;

use super::{Model, TokenSequence, TrainConfig, LN_EPS};
use crate::corpus::Dataset;
use crate::error::{Error, Result};
use crate::numerics::rng::seeded_rng;
use crate::numerics::tape::{GradTape, ParamId, VarId};
use crate::numerics::{Matrix, OptimizerState};

pub struct TrainOutcome {
    pub model: Model,
    /// English validation accuracy after each epoch.
    pub val_accuracy: Vec<f64>,
}

/// Records one full forward pass for an example on a fresh tape with every
/// model parameter registered in canonical order.
fn example_loss_tape(model: &Model, tokens: &TokenSequence, label: usize) -> (GradTape, VarId) {
    let cfg = &model.config;
    let act = cfg.activation;
    let heads = cfg.n_heads;
    let hd = cfg.head_dim();
    let scale = 1.0 / (hd as f64).sqrt();
    let seq_len = tokens.len();

    let mut tape = GradTape::new();
    // canonical registration order; ParamIds are dense and ordered
    let params: Vec<(ParamId, VarId)> = model
        .param_refs()
        .into_iter()
        .map(|m| tape.param(m.clone()))
        .collect();
    let mut it = params.iter().map(|(_, v)| *v);
    let tok_emb = it.next().unwrap();
    let pos_emb = it.next().unwrap();
    let mut layer_vars = Vec::with_capacity(cfg.n_layers);
    for _ in 0..cfg.n_layers {
        let vars: Vec<VarId> = (0..15).map(|_| it.next().unwrap()).collect();
        layer_vars.push(vars);
    }
    let fin_g = it.next().unwrap();
    let fin_b = it.next().unwrap();
    let head_w = it.next().unwrap();
    let head_b = it.next().unwrap();

    let ids: Vec<usize> = tokens.ids().iter().map(|&t| t as usize).collect();
    let positions: Vec<usize> = (0..seq_len).collect();
    let tok = tape.embedding_gather(tok_emb, &ids);
    let pos = tape.embedding_gather(pos_emb, &positions);
    let mut x = tape.add(tok, pos);

    for vars in &layer_vars {
        let [wq, bq, wk, wv, bv, wo, bo, ln1g, ln1b, ln2g, ln2b, keys, key_b, values, value_b] =
            vars[..]
        else {
            unreachable!()
        };
        let h1 = tape.layer_norm_rows(x, ln1g, ln1b, LN_EPS);
        let q = {
            let m = tape.matmul(h1, wq);
            tape.add_row_broadcast(m, bq)
        };
        let k = tape.matmul(h1, wk);
        let v = {
            let m = tape.matmul(h1, wv);
            tape.add_row_broadcast(m, bv)
        };
        let mut head_outputs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = tape.col_slice(q, h * hd, hd);
            let kh = tape.col_slice(k, h * hd, hd);
            let vh = tape.col_slice(v, h * hd, hd);
            let kt = tape.transpose(kh);
            let scores = tape.matmul(qh, kt);
            let scaled = tape.scale(scores, scale);
            let attn = tape.softmax_rows(scaled);
            head_outputs.push(tape.matmul(attn, vh));
        }
        let ctx = tape.concat_cols(&head_outputs);
        let attn_out = {
            let m = tape.matmul(ctx, wo);
            tape.add_row_broadcast(m, bo)
        };
        x = tape.add(x, attn_out);

        let h2 = tape.layer_norm_rows(x, ln2g, ln2b, LN_EPS);
        let pre = {
            let m = tape.matmul(h2, keys);
            tape.add_row_broadcast(m, key_b)
        };
        let a = tape.activation(pre, act);
        let ffn_out = {
            let m = tape.matmul(a, values);
            tape.add_row_broadcast(m, value_b)
        };
        x = tape.add(x, ffn_out);
    }

    let normed = tape.layer_norm_rows(x, fin_g, fin_b, LN_EPS);
    let cls = tape.row_slice(normed, 0);
    let logits = {
        let m = tape.matmul(cls, head_w);
        tape.add_row_broadcast(m, head_b)
    };
    let loss = tape.cross_entropy(logits, label);
    (tape, loss)
}

/// Loss and full-model gradients (canonical order) for one example.
pub fn example_loss_and_grads(
    model: &Model,
    tokens: &TokenSequence,
    label: usize,
) -> Result<(f64, Vec<Matrix>)> {
    tokens.validate(model.config.vocab_size, model.config.max_len)?;
    let (mut tape, loss) = example_loss_tape(model, tokens, label);
    let value = tape.value(loss).item();
    let grads = tape.backward(loss);
    Ok((value, grads.into_vec()))
}

fn english_accuracy(model: &Model, examples: &[&crate::corpus::EditExample]) -> Result<f64> {
    let mut correct = 0usize;
    for ex in examples {
        if model.predict(&ex.english, None)? == ex.label.class_index() {
            correct += 1;
        }
    }
    Ok(correct as f64 / examples.len() as f64)
}

/// Trains the full model and returns the checkpoint that scored best on
/// the validation split, along with the per-epoch accuracy curve.
/// Deterministic given the config seed; zero epochs returns the input
/// model unchanged.
pub fn train_base(model: &Model, dataset: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let instances = dataset.train_instances()?;
    if instances.is_empty() {
        return Err(Error::Data("empty split D_train".to_string()));
    }
    let val = dataset.val();
    if val.is_empty() {
        return Err(Error::Data("empty split D_val".to_string()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".to_string()));
    }

    let mut current = model.clone();
    let mut curve = Vec::with_capacity(cfg.epochs);
    if cfg.epochs == 0 {
        return Ok(TrainOutcome {
            model: current,
            val_accuracy: curve,
        });
    }

    let shapes: Vec<(usize, usize)> = current.param_refs().iter().map(|m| m.shape()).collect();
    let names = current.param_names();
    let mut opt = OptimizerState::new(cfg.optimizer, &shapes);
    let mut rng = seeded_rng(cfg.seed);
    let mut order: Vec<usize> = (0..instances.len()).collect();

    let mut best: Option<(f64, Model)> = None;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let mut acc: Vec<Matrix> = shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect();
            let inv = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let (ex, tokens) = instances[i];
                let (_, grads) =
                    example_loss_and_grads(&current, tokens, ex.label.class_index())?;
                for (a, g) in acc.iter_mut().zip(grads.iter()) {
                    a.add_scaled_assign(g, inv);
                }
            }
            let mut params = current.param_refs_mut();
            opt.apply_named(&mut params, &acc, Some(&names))?;
        }
        let acc = english_accuracy(&current, &val)?;
        curve.push(acc);
        let improved = best.as_ref().map_or(true, |(b, _)| acc > *b);
        if improved {
            best = Some((acc, current.clone()));
        }
    }

    Ok(TrainOutcome {
        model: best.map(|(_, m)| m).unwrap_or(current),
        val_accuracy: curve,
    })
}
