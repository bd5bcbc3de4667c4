//! Direct fine-tuning baseline: unfreeze only the last FFN and chase each
//! mispredicted English example with plain cross-entropy, no patches and
//! no memory constraint. Locality damage is the point of comparison.

use serde::{Deserialize, Serialize};

use super::{EditMethodKind, EditRecord, EditReport, EditedModel};
use crate::corpus::EditExample;
use crate::error::{Error, Result};
use crate::model::{argmax_lowest, Model, LN_EPS};
use crate::numerics::tape::GradTape;
use crate::numerics::{Matrix, OptimizerConfig, OptimizerState};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneConfig {
    pub learning_rate: f64,
    pub max_steps_per_example: u32,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            learning_rate: 1e-2,
            max_steps_per_example: 100,
        }
    }
}

/// Sequentially fine-tunes the last FFN (keys, key bias, values, value
/// bias) on every mispredicted English edit example until it flips or the
/// per-example budget runs out. Everything else stays frozen.
pub fn finetune_baseline(
    model: &Model,
    d_edit: &[&EditExample],
    cfg: &FinetuneConfig,
) -> Result<(EditedModel, EditReport)> {
    if d_edit.is_empty() {
        return Err(Error::Data("empty edit stream".to_string()));
    }
    let start = std::time::Instant::now();
    let mut edited = EditedModel::unedited(model.clone());
    let act = model.config.activation;
    let mut records = Vec::with_capacity(d_edit.len());

    for ex in d_edit {
        let label = ex.label.class_index();
        // q and the residual stream live below the FFN, so they stay valid
        // while its parameters move
        let cache = edited.model.encode_lower(&ex.english)?;
        let q0 = Matrix::row_vector(cache.ffn_input.row(0).to_vec());
        let residual0 = Matrix::row_vector(cache.residual.row(0).to_vec());

        let ffn = &edited.model.last_layer().ffn;
        let mut keys = ffn.keys.clone();
        let mut key_bias = ffn.key_bias.clone();
        let mut values = ffn.values.clone();
        let mut value_bias = ffn.value_bias.clone();

        let predicted_with = |keys: &Matrix,
                              key_bias: &Matrix,
                              values: &Matrix,
                              value_bias: &Matrix|
         -> usize {
            let ffn = crate::model::FfnParams {
                keys: keys.clone(),
                key_bias: key_bias.clone(),
                values: values.clone(),
                value_bias: value_bias.clone(),
            };
            let f = crate::patching::ffn_forward(q0.row(0), &ffn, act);
            let row: Vec<f64> = residual0
                .row(0)
                .iter()
                .zip(f.iter())
                .map(|(r, v)| r + v)
                .collect();
            argmax_lowest(&edited.model.logits_from_prehead_row(&row))
        };

        let initially_wrong = predicted_with(&keys, &key_bias, &values, &value_bias) != label;
        let mut steps = 0u32;
        if initially_wrong {
            let shapes = [
                keys.shape(),
                key_bias.shape(),
                values.shape(),
                value_bias.shape(),
            ];
            let mut opt = OptimizerState::new(
                OptimizerConfig {
                    learning_rate: cfg.learning_rate,
                    weight_decay: 0.0,
                    warmup_updates: 0,
                    ..OptimizerConfig::default()
                },
                &shapes,
            );
            while steps < cfg.max_steps_per_example {
                if predicted_with(&keys, &key_bias, &values, &value_bias) == label {
                    break;
                }
                let mut tape = GradTape::new();
                let (k_id, k) = tape.param(keys.clone());
                let (kb_id, kb) = tape.param(key_bias.clone());
                let (v_id, v) = tape.param(values.clone());
                let (vb_id, vb) = tape.param(value_bias.clone());
                let q = tape.constant(q0.clone());
                let res = tape.constant(residual0.clone());
                let fin_g = tape.constant(edited.model.final_gamma.clone());
                let fin_b = tape.constant(edited.model.final_beta.clone());
                let head_w = tape.constant(edited.model.head_weight.clone());
                let head_b = tape.constant(edited.model.head_bias.clone());

                let pre = tape.matmul(q, k);
                let pre = tape.add_row_broadcast(pre, kb);
                let a = tape.activation(pre, act);
                let f = tape.matmul(a, v);
                let f = tape.add_row_broadcast(f, vb);
                let row = tape.add(res, f);
                let normed = tape.layer_norm_rows(row, fin_g, fin_b, LN_EPS);
                let logits = tape.matmul(normed, head_w);
                let logits = tape.add_row_broadcast(logits, head_b);
                let loss = tape.cross_entropy(logits, label);
                let grads = tape.backward(loss);
                opt.apply(
                    &mut [&mut keys, &mut key_bias, &mut values, &mut value_bias],
                    &[
                        grads.get(k_id).clone(),
                        grads.get(kb_id).clone(),
                        grads.get(v_id).clone(),
                        grads.get(vb_id).clone(),
                    ],
                )?;
                steps += 1;
            }
            let success = predicted_with(&keys, &key_bias, &values, &value_bias) == label;
            let ffn = &mut edited.model.layers.last_mut().expect("n_layers >= 1").ffn;
            ffn.keys = keys;
            ffn.key_bias = key_bias;
            ffn.values = values;
            ffn.value_bias = value_bias;
            records.push(EditRecord {
                id: ex.id,
                triggered: true,
                mispredicted_languages: vec!["en".to_string()],
                sampled_language: None,
                steps,
                success: Some(success),
            });
        } else {
            records.push(EditRecord {
                id: ex.id,
                triggered: false,
                mispredicted_languages: Vec::new(),
                sampled_language: None,
                steps: 0,
                success: None,
            });
        }
    }

    let report = EditReport {
        method: EditMethodKind::FineTune.display_name().to_string(),
        seed: 0,
        patch_count: 0,
        records,
        wall_time_secs: start.elapsed().as_secs_f64(),
        config_hash: None,
    };
    Ok((edited, report))
}
