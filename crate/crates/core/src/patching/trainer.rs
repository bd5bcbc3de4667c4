//! Patch construction and the per-patch trainer.
//!
//! Training a patch only ever touches `(k_p, b_p, v_p)`: the computation
//! below the last FFN layer is frozen, so each edit example is reduced to
//! a cached pair (q rows, pre-head tail row) once and the optimization
//! loop runs entirely on that cache. Frozen patches fold into the cached
//! tail as constants.

use serde::{Deserialize, Serialize};

use super::{ffn_forward, patch_activation, Patch, PatchBank, PatchLossConfig};
use crate::error::{Error, Result};
use crate::model::{Model, TokenSequence, LN_EPS};
use crate::numerics::rng::{normal, seeded_rng, SeededRng};
use crate::numerics::tape::{GradTape, ParamId, VarId};
use crate::numerics::{dot, Activation, Matrix, OptimizerConfig, OptimizerState};
use rand::Rng;

/// How a fresh patch is initialized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum InitStrategy {
    /// Key seeded at the edit example's own mean q (plus small noise),
    /// bias at minus the margin, value near zero: dormant globally, warm
    /// on its target.
    #[default]
    WarmStart,
    /// Like `WarmStart` but with the value vector exactly zero, so the
    /// patched forward initially equals the base forward everywhere.
    Zeros,
}

/// Loss components for one step: `total` is always the weighted sum of
/// the three parts.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct PatchLossValues {
    pub edit: f64,
    pub act: f64,
    pub mem: f64,
    pub total: f64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct PatchTrainStats {
    pub steps: u32,
    pub success: bool,
    pub final_losses: PatchLossValues,
}

/// Pool of unrelated examples for the memory loss, reduced to their
/// last-FFN inputs. q rows do not depend on the patch bank, so one pool
/// stays valid for an entire editing run.
pub struct MemorySource {
    qs: Vec<Matrix>,
}

impl MemorySource {
    pub fn from_sequences<'a>(
        model: &Model,
        seqs: impl Iterator<Item = &'a TokenSequence>,
    ) -> Result<Self> {
        let mut qs = Vec::new();
        for s in seqs {
            qs.push(model.encode_lower(s)?.ffn_input);
        }
        Ok(MemorySource { qs })
    }

    pub fn len(&self) -> usize {
        self.qs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.qs.is_empty()
    }

    /// Uniform sample with replacement; empty pool yields an empty batch.
    pub fn sample(&self, rng: &mut SeededRng, n: usize) -> Vec<&Matrix> {
        if self.qs.is_empty() {
            return Vec::new();
        }
        (0..n)
            .map(|_| &self.qs[rng.random_range(0..self.qs.len())])
            .collect()
    }
}

/// One edit example reduced to the constants patch training needs.
struct EditTarget {
    q: Matrix,
    tail_base_row0: Vec<f64>,
    label: usize,
}

fn build_target(
    model: &Model,
    bank: &PatchBank,
    tokens: &TokenSequence,
    label: usize,
) -> Result<EditTarget> {
    let act = model.config.activation;
    let cache = model.encode_lower(tokens)?;
    let q0 = cache.ffn_input.row(0);
    let mut ffn_out = ffn_forward(q0, &model.last_layer().ffn, act);
    for p in bank.frozen_patches() {
        let a = patch_activation(q0, p, act);
        if a == 0.0 {
            continue;
        }
        for (o, v) in ffn_out.iter_mut().zip(&p.v_p) {
            *o += a * v;
        }
    }
    let tail_base_row0 = cache
        .residual
        .row(0)
        .iter()
        .zip(ffn_out.iter())
        .map(|(r, f)| r + f)
        .collect();
    Ok(EditTarget {
        q: cache.ffn_input,
        tail_base_row0,
        label,
    })
}

struct LossGraph {
    tape: GradTape,
    total: VarId,
    edit: VarId,
    act: VarId,
    mem: VarId,
    k_id: ParamId,
    b_id: ParamId,
    v_id: ParamId,
}

/// Builds the full patch-training loss on a fresh tape.
///
/// `L_edit`: mean cross-entropy over the edit batch through the patched
/// tail. `L_act`: mean squared hinge `max(0, m - a_hat)^2` where `a_hat`
/// is the max patch activation over positions. `L_mem`: mean `a_hat^2`
/// over the memory batch. Total is the lambda-weighted sum.
fn build_loss_graph(
    model: &Model,
    targets: &[EditTarget],
    memory: &[&Matrix],
    k: &Matrix,
    b: &Matrix,
    v: &Matrix,
    cfg: &PatchLossConfig,
) -> LossGraph {
    let act = model.config.activation;
    let mut tape = GradTape::new();
    let (k_id, k_var) = tape.param(k.clone());
    let (b_id, b_var) = tape.param(b.clone());
    let (v_id, v_var) = tape.param(v.clone());
    let k_t = tape.transpose(k_var);

    let fin_g = tape.constant(model.final_gamma.clone());
    let fin_b = tape.constant(model.final_beta.clone());
    let head_w = tape.constant(model.head_weight.clone());
    let head_b = tape.constant(model.head_bias.clone());

    let mut ces = Vec::with_capacity(targets.len());
    let mut hinges = Vec::with_capacity(targets.len());
    for t in targets {
        let q = tape.constant(t.q.clone());
        let pre = tape.matmul(q, k_t);
        let pre = tape.add_scalar_var(pre, b_var);
        let acts = tape.activation(pre, act);
        let a_hat = tape.max_all(acts);
        let a0 = tape.row_slice(acts, 0);
        let contrib = tape.mul_scalar_var(v_var, a0);
        let tail = tape.constant(Matrix::row_vector(t.tail_base_row0.clone()));
        let row = tape.add(tail, contrib);
        let normed = tape.layer_norm_rows(row, fin_g, fin_b, LN_EPS);
        let pre_logits = tape.matmul(normed, head_w);
        let logits = tape.add_row_broadcast(pre_logits, head_b);
        ces.push(tape.cross_entropy(logits, t.label));

        let neg = tape.scale(a_hat, -1.0);
        let shifted = tape.add_const(neg, cfg.margin);
        let relu = tape.activation(shifted, Activation::Relu);
        hinges.push(tape.mul_elem(relu, relu));
    }
    let edit = tape.mean_of_scalars(&ces);
    let act_loss = tape.mean_of_scalars(&hinges);

    let mem = if memory.is_empty() {
        tape.constant(Matrix::scalar(0.0))
    } else {
        let mut sqs = Vec::with_capacity(memory.len());
        for q in memory {
            let qc = tape.constant((*q).clone());
            let pre = tape.matmul(qc, k_t);
            let pre = tape.add_scalar_var(pre, b_var);
            let acts = tape.activation(pre, act);
            let a_hat = tape.max_all(acts);
            sqs.push(tape.mul_elem(a_hat, a_hat));
        }
        tape.mean_of_scalars(&sqs)
    };

    let we = tape.scale(edit, cfg.lambda_edit);
    let wa = tape.scale(act_loss, cfg.lambda_act);
    let wm = tape.scale(mem, cfg.lambda_mem);
    let partial = tape.add(we, wa);
    let total = tape.add(partial, wm);

    LossGraph {
        tape,
        total,
        edit,
        act: act_loss,
        mem,
        k_id,
        b_id,
        v_id,
    }
}

impl LossGraph {
    fn values(&self) -> PatchLossValues {
        PatchLossValues {
            edit: self.tape.value(self.edit).item(),
            act: self.tape.value(self.act).item(),
            mem: self.tape.value(self.mem).item(),
            total: self.tape.value(self.total).item(),
        }
    }
}

/// Creates the unfrozen patch for an edit example. Fails when the bank
/// already holds an unfrozen patch.
pub fn new_patch(
    model: &Model,
    bank: &PatchBank,
    tokens: &TokenSequence,
    example_id: u64,
    cfg: &PatchLossConfig,
    seed: u64,
) -> Result<Patch> {
    if bank.unfrozen().is_some() {
        return Err(Error::Sequencing(
            "cannot create a patch while another is still training".to_string(),
        ));
    }
    cfg.validate()?;
    let d = model.config.d_model;
    let cache = model.encode_lower(tokens)?;
    let mut rng = seeded_rng(seed);

    let mut k_p = vec![0.0; d];
    let rows = cache.ffn_input.rows() as f64;
    for r in 0..cache.ffn_input.rows() {
        for (acc, v) in k_p.iter_mut().zip(cache.ffn_input.row(r)) {
            *acc += v / rows;
        }
    }
    for v in k_p.iter_mut() {
        *v += normal(&mut rng, 0.0, 1e-2);
    }
    let v_p = match cfg.init {
        InitStrategy::WarmStart => (0..d).map(|_| normal(&mut rng, 0.0, 1e-3)).collect(),
        InitStrategy::Zeros => vec![0.0; d],
    };

    Ok(Patch {
        id: bank.next_id(),
        k_p,
        b_p: -cfg.margin,
        v_p,
        frozen: false,
        origin_example_id: example_id,
    })
}

fn max_activation_slices(q: &Matrix, k: &[f64], b: f64, act: Activation) -> f64 {
    (0..q.rows())
        .map(|r| act.apply(dot(q.row(r), k) + b))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Prediction + margin check for one target under the current patch values.
fn target_satisfied(
    model: &Model,
    t: &EditTarget,
    k: &[f64],
    b: f64,
    v: &[f64],
    margin: f64,
) -> bool {
    let act = model.config.activation;
    let a0 = act.apply(dot(t.q.row(0), k) + b);
    let row: Vec<f64> = t
        .tail_base_row0
        .iter()
        .zip(v.iter())
        .map(|(base, vv)| base + a0 * vv)
        .collect();
    let logits = model.logits_from_prehead_row(&row);
    let correct = crate::model::argmax_lowest(&logits) == t.label;
    correct && max_activation_slices(&t.q, k, b, act) >= margin
}

/// Loss components of the current unfrozen patch on the given batches.
pub fn patch_losses(
    model: &Model,
    bank: &PatchBank,
    edit_batch: &[(&TokenSequence, usize)],
    memory_batch: &[&TokenSequence],
    cfg: &PatchLossConfig,
) -> Result<PatchLossValues> {
    cfg.validate()?;
    if edit_batch.is_empty() {
        return Err(Error::Data("empty edit batch".to_string()));
    }
    let patch = bank
        .unfrozen()
        .ok_or_else(|| Error::Sequencing("no unfrozen patch to evaluate".to_string()))?;

    let mut targets = Vec::with_capacity(edit_batch.len());
    for (tokens, label) in edit_batch {
        targets.push(build_target(model, bank, tokens, *label)?);
    }
    let mut memory_qs = Vec::with_capacity(memory_batch.len());
    for tokens in memory_batch {
        memory_qs.push(model.encode_lower(tokens)?.ffn_input);
    }
    let memory_refs: Vec<&Matrix> = memory_qs.iter().collect();

    let k = Matrix::row_vector(patch.k_p.clone());
    let b = Matrix::scalar(patch.b_p);
    let v = Matrix::row_vector(patch.v_p.clone());
    let graph = build_loss_graph(model, &targets, &memory_refs, &k, &b, &v, cfg);
    Ok(graph.values())
}

/// Optimizes the bank's single unfrozen patch until every edit-batch
/// member is predicted correctly with activation at least the margin, or
/// the step budget runs out. The patch is frozen either way; a failed fit
/// is reported through `success = false` and kept as a best effort.
pub fn train_patch(
    model: &Model,
    bank: &mut PatchBank,
    edit_batch: &[(&TokenSequence, usize)],
    memory: &MemorySource,
    cfg: &PatchLossConfig,
    seed: u64,
) -> Result<PatchTrainStats> {
    cfg.validate()?;
    if edit_batch.is_empty() {
        return Err(Error::Data("empty edit batch".to_string()));
    }
    let patch = bank
        .unfrozen()
        .ok_or_else(|| Error::Sequencing("no unfrozen patch to train".to_string()))?;
    let d = model.config.d_model;

    let mut targets = Vec::with_capacity(edit_batch.len());
    for (tokens, label) in edit_batch {
        targets.push(build_target(model, bank, tokens, *label)?);
    }

    let mut k = Matrix::row_vector(patch.k_p.clone());
    let mut b = Matrix::scalar(patch.b_p);
    let mut v = Matrix::row_vector(patch.v_p.clone());

    let mut rng = seeded_rng(seed);
    let opt_cfg = OptimizerConfig {
        learning_rate: cfg.learning_rate,
        weight_decay: 0.0,
        warmup_updates: 0,
        ..OptimizerConfig::default()
    };
    let mut opt = OptimizerState::new(opt_cfg, &[(1, d), (1, 1), (1, d)]);

    let satisfied = |k: &Matrix, b: &Matrix, v: &Matrix| {
        targets
            .iter()
            .all(|t| target_satisfied(model, t, k.row(0), b.item(), v.row(0), cfg.margin))
    };

    let mut steps = 0u32;
    let mut success = satisfied(&k, &b, &v);
    while !success && steps < cfg.max_steps {
        let batch = memory.sample(&mut rng, cfg.memory_batch_size);
        let mut graph = build_loss_graph(model, &targets, &batch, &k, &b, &v, cfg);
        let grads = graph.tape.backward(graph.total);
        opt.apply(
            &mut [&mut k, &mut b, &mut v],
            &[
                grads.get(graph.k_id).clone(),
                grads.get(graph.b_id).clone(),
                grads.get(graph.v_id).clone(),
            ],
        )?;
        steps += 1;
        success = satisfied(&k, &b, &v);
    }

    let final_batch = memory.sample(&mut rng, cfg.memory_batch_size);
    let final_graph = build_loss_graph(model, &targets, &final_batch, &k, &b, &v, cfg);
    let final_losses = final_graph.values();

    let patch = bank.unfrozen_mut().expect("checked above");
    patch.k_p = k.row(0).to_vec();
    patch.b_p = b.item();
    patch.v_p = v.row(0).to_vec();
    patch.frozen = true;

    Ok(PatchTrainStats {
        steps,
        success,
        final_losses,
    })
}
