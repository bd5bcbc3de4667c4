//! Patch neurons: the extended FFN forward, patch construction, training
//! losses, and the per-patch trainer.
//!
//! A patch is one key-value pair `(k_p, b_p, v_p)` appended alongside the
//! last FFN layer. The extended forward is
//! `FFN'(q) = FFN(q) + sigma(q . k_p + b_p) * v_p`, summed over every
//! patch in the bank; a patch whose activation is exactly zero leaves the
//! output bit-identical to the unpatched layer.

mod trainer;

pub use trainer::{
    new_patch, patch_losses, train_patch, InitStrategy, MemorySource, PatchLossValues,
    PatchTrainStats,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::FfnParams;
use crate::numerics::{dot, Activation, Matrix};

/// One appended key-value pair; the unit of edited knowledge.
#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub id: u64,
    pub k_p: Vec<f64>,
    pub b_p: f64,
    pub v_p: Vec<f64>,
    pub frozen: bool,
    pub origin_example_id: u64,
}

/// Ordered collection of patches attached to one editable layer.
///
/// Holds at most one unfrozen patch at any time — knowledge is learned one
/// piece at a time — and iterates in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PatchBank {
    patches: Vec<Patch>,
    layer_index: usize,
}

impl PatchBank {
    pub fn new(layer_index: usize) -> Self {
        PatchBank {
            patches: Vec::new(),
            layer_index,
        }
    }

    pub fn layer_index(&self) -> usize {
        self.layer_index
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Patch> {
        self.patches.iter()
    }

    pub fn frozen_patches(&self) -> impl Iterator<Item = &Patch> {
        self.patches.iter().filter(|p| p.frozen)
    }

    pub fn unfrozen(&self) -> Option<&Patch> {
        self.patches.iter().find(|p| !p.frozen)
    }

    pub(crate) fn unfrozen_mut(&mut self) -> Option<&mut Patch> {
        self.patches.iter_mut().find(|p| !p.frozen)
    }

    /// Next available patch id (monotone).
    pub fn next_id(&self) -> u64 {
        self.patches.iter().map(|p| p.id + 1).max().unwrap_or(0)
    }

    pub fn push(&mut self, patch: Patch) -> Result<()> {
        if self.patches.iter().any(|p| p.id == patch.id) {
            return Err(Error::Sequencing(format!(
                "patch id {} already present in bank",
                patch.id
            )));
        }
        if !patch.frozen && self.unfrozen().is_some() {
            return Err(Error::Sequencing(
                "bank already holds an unfrozen patch".to_string(),
            ));
        }
        self.patches.push(patch);
        Ok(())
    }

    /// Freezes the single unfrozen patch, if any.
    pub fn freeze_unfrozen(&mut self) {
        if let Some(p) = self.unfrozen_mut() {
            p.frozen = true;
        }
    }
}

/// Loss weights and the trainer budget for one patch.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct PatchLossConfig {
    /// Activation margin m; the patch must reach `a_hat >= m` on its own
    /// example.
    pub margin: f64,
    pub lambda_edit: f64,
    pub lambda_act: f64,
    pub lambda_mem: f64,
    /// Unrelated examples resampled from the memory pool each step.
    pub memory_batch_size: usize,
    pub max_steps: u32,
    pub learning_rate: f64,
    pub init: InitStrategy,
}

impl Default for PatchLossConfig {
    fn default() -> Self {
        PatchLossConfig {
            margin: 1.0,
            lambda_edit: 1.0,
            lambda_act: 1.0,
            lambda_mem: 1.0,
            memory_batch_size: 32,
            max_steps: 500,
            learning_rate: 5e-2,
            init: InitStrategy::WarmStart,
        }
    }
}

impl PatchLossConfig {
    pub fn validate(&self) -> Result<()> {
        let mut violations = Vec::new();
        if !(self.margin > 0.0) {
            violations.push(format!("margin must be > 0, got {}", self.margin));
        }
        for (name, w) in [
            ("lambda_edit", self.lambda_edit),
            ("lambda_act", self.lambda_act),
            ("lambda_mem", self.lambda_mem),
        ] {
            if !w.is_finite() || w < 0.0 {
                violations.push(format!("{name} must be finite and nonnegative, got {w}"));
            }
        }
        if self.learning_rate <= 0.0 {
            violations.push("learning_rate must be positive".to_string());
        }
        if violations.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(violations.join("; ")))
        }
    }
}

/// Plain key-value FFN forward for one q row: `sigma(q.K + b_k).V + b_v`.
pub fn ffn_forward(q: &[f64], ffn: &FfnParams, act: Activation) -> Vec<f64> {
    assert_eq!(
        q.len(),
        ffn.keys.rows(),
        "ffn shape mismatch: q has {} dims, keys are {}x{}",
        q.len(),
        ffn.keys.rows(),
        ffn.keys.cols()
    );
    let mut a = ffn.key_bias.row(0).to_vec();
    for (i, &qi) in q.iter().enumerate() {
        if qi == 0.0 {
            continue;
        }
        for (acc, k) in a.iter_mut().zip(ffn.keys.row(i)) {
            *acc += qi * k;
        }
    }
    for v in a.iter_mut() {
        *v = act.apply(*v);
    }
    let mut out = ffn.value_bias.row(0).to_vec();
    for (i, &ai) in a.iter().enumerate() {
        if ai == 0.0 {
            continue;
        }
        for (acc, v) in out.iter_mut().zip(ffn.values.row(i)) {
            *acc += ai * v;
        }
    }
    out
}

/// Activation of a single patch on one q row: `sigma(q . k_p + b_p)`.
pub fn patch_activation(q: &[f64], patch: &Patch, act: Activation) -> f64 {
    assert_eq!(
        q.len(),
        patch.k_p.len(),
        "patch key shape mismatch: q has {} dims, k_p has {}",
        q.len(),
        patch.k_p.len()
    );
    act.apply(dot(q, &patch.k_p) + patch.b_p)
}

/// Extended FFN forward of one q row over every patch in the bank.
///
/// Exactly `ffn_forward(q) + sum_p sigma(q.k_p + b_p) * v_p`; an empty bank
/// reproduces the base output bit-for-bit because the patch loop adds
/// nothing.
pub fn patched_ffn_forward(
    q: &[f64],
    ffn: &FfnParams,
    bank: &PatchBank,
    act: Activation,
) -> Vec<f64> {
    let mut out = ffn_forward(q, ffn, act);
    for patch in bank.iter() {
        let a_p = patch_activation(q, patch, act);
        if a_p == 0.0 {
            continue;
        }
        for (o, v) in out.iter_mut().zip(&patch.v_p) {
            *o += a_p * v;
        }
    }
    out
}

/// Row-wise extended forward used by the model's last layer.
pub fn patched_ffn_rows(
    q: &Matrix,
    ffn: &FfnParams,
    bank: Option<&PatchBank>,
    act: Activation,
) -> Matrix {
    let mut out = Matrix::zeros(q.rows(), ffn.values.cols());
    match bank {
        Some(bank) => {
            for r in 0..q.rows() {
                let row = patched_ffn_forward(q.row(r), ffn, bank, act);
                out.row_mut(r).copy_from_slice(&row);
            }
        }
        None => {
            for r in 0..q.rows() {
                let row = ffn_forward(q.row(r), ffn, act);
                out.row_mut(r).copy_from_slice(&row);
            }
        }
    }
    out
}

/// Maximum activation of a patch across all positions of a q matrix.
pub fn max_patch_activation(q: &Matrix, patch: &Patch, act: Activation) -> f64 {
    (0..q.rows())
        .map(|r| patch_activation(q.row(r), patch, act))
        .fold(f64::NEG_INFINITY, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gelu;

    fn identity_ffn(n: usize) -> FfnParams {
        FfnParams {
            keys: Matrix::identity(n),
            key_bias: Matrix::zeros(1, n),
            values: Matrix::identity(n),
            value_bias: Matrix::zeros(1, n),
        }
    }

    #[test]
    fn ffn_identity_applies_activation_pointwise() {
        let ffn = identity_ffn(2);
        let out = ffn_forward(&[2.0, -3.0], &ffn, Activation::Gelu);
        assert!((out[0] - 1.95450).abs() < 1e-5);
        assert!((out[1] - (-0.00405)).abs() < 1e-5);
        // against the closed form directly
        assert!((out[0] - gelu(2.0)).abs() < 1e-15);
        assert!((out[1] - gelu(-3.0)).abs() < 1e-15);
    }

    #[test]
    fn zero_q_with_zero_key_bias_returns_value_bias() {
        let mut ffn = identity_ffn(3);
        ffn.value_bias = Matrix::row_vector(vec![0.5, -1.0, 2.0]);
        let out = ffn_forward(&[0.0, 0.0, 0.0], &ffn, Activation::Gelu);
        assert_eq!(out, vec![0.5, -1.0, 2.0]);
    }

    #[test]
    fn ffn_matches_scalar_loop_oracle() {
        // independent naive oracle over a random-ish 4-dim instance
        let keys = Matrix::from_fn(4, 4, |r, c| ((r * 4 + c) as f64).sin());
        let key_bias = Matrix::from_fn(1, 4, |_, c| (c as f64) * 0.1 - 0.2);
        let values = Matrix::from_fn(4, 4, |r, c| ((r + 2 * c) as f64).cos());
        let value_bias = Matrix::from_fn(1, 4, |_, c| 0.3 - (c as f64) * 0.05);
        let ffn = FfnParams {
            keys: keys.clone(),
            key_bias: key_bias.clone(),
            values: values.clone(),
            value_bias: value_bias.clone(),
        };
        let q = [0.7, -1.3, 0.2, 2.1];

        let mut acts = [0.0f64; 4];
        for j in 0..4 {
            let mut pre = key_bias.get(0, j);
            for i in 0..4 {
                pre += q[i] * keys.get(i, j);
            }
            acts[j] = gelu(pre);
        }
        let mut expected = [0.0f64; 4];
        for j in 0..4 {
            let mut acc = value_bias.get(0, j);
            for i in 0..4 {
                acc += acts[i] * values.get(i, j);
            }
            expected[j] = acc;
        }

        let out = ffn_forward(&q, &ffn, Activation::Gelu);
        for (a, b) in out.iter().zip(expected.iter()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn empty_bank_is_exactly_base_forward() {
        let ffn = identity_ffn(2);
        let bank = PatchBank::new(0);
        let q = [0.4, -0.9];
        assert_eq!(
            patched_ffn_forward(&q, &ffn, &bank, Activation::Gelu),
            ffn_forward(&q, &ffn, Activation::Gelu)
        );
    }

    #[test]
    fn single_patch_hand_case() {
        // zero base params, patch k=[1,0], b=0, v=[0,2], q=[1,0]
        let ffn = FfnParams {
            keys: Matrix::zeros(2, 2),
            key_bias: Matrix::zeros(1, 2),
            values: Matrix::zeros(2, 2),
            value_bias: Matrix::zeros(1, 2),
        };
        let mut bank = PatchBank::new(0);
        bank.push(Patch {
            id: 0,
            k_p: vec![1.0, 0.0],
            b_p: 0.0,
            v_p: vec![0.0, 2.0],
            frozen: true,
            origin_example_id: 0,
        })
        .unwrap();
        let out = patched_ffn_forward(&[1.0, 0.0], &ffn, &bank, Activation::Gelu);
        assert!((out[0] - 0.0).abs() < 1e-15);
        assert!((out[1] - 1.682690).abs() < 1e-5);
        assert!((out[1] - 2.0 * gelu(1.0)).abs() < 1e-15);
    }

    #[test]
    fn patch_activation_cases() {
        let p = |k: Vec<f64>, b: f64| Patch {
            id: 9,
            k_p: k,
            b_p: b,
            v_p: vec![0.0; 2],
            frozen: true,
            origin_example_id: 0,
        };
        // orthogonal q and key
        assert_eq!(
            patch_activation(&[1.0, 0.0], &p(vec![0.0, 1.0], 0.0), Activation::Gelu),
            0.0
        );
        // pre-activation exactly zero
        assert_eq!(
            patch_activation(&[1.0, 0.0], &p(vec![2.0, 0.0], -2.0), Activation::Gelu),
            0.0
        );
        // unit alignment
        let s = 1.0 / 2.0f64.sqrt();
        let a = patch_activation(&[s, s], &p(vec![s, s], 0.0), Activation::Gelu);
        assert!((a - 0.841345).abs() < 1e-6);
    }

    #[test]
    fn eq8_identity_random_banks() {
        use crate::numerics::rng::seeded_rng;
        use rand::Rng;
        let mut rng = seeded_rng(11);
        let d = 6;
        for _ in 0..200 {
            let ffn = FfnParams {
                keys: Matrix::from_fn(d, d, |_, _| rng.random::<f64>() - 0.5),
                key_bias: Matrix::from_fn(1, d, |_, _| rng.random::<f64>() - 0.5),
                values: Matrix::from_fn(d, d, |_, _| rng.random::<f64>() - 0.5),
                value_bias: Matrix::from_fn(1, d, |_, _| rng.random::<f64>() - 0.5),
            };
            let n_patches = rng.random_range(0..8);
            let mut bank = PatchBank::new(0);
            for id in 0..n_patches {
                bank.push(Patch {
                    id,
                    k_p: (0..d).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect(),
                    b_p: rng.random::<f64>() - 0.5,
                    v_p: (0..d).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect(),
                    frozen: true,
                    origin_example_id: id,
                })
                .unwrap();
            }
            let q: Vec<f64> = (0..d).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
            let base = ffn_forward(&q, &ffn, Activation::Gelu);
            let patched = patched_ffn_forward(&q, &ffn, &bank, Activation::Gelu);
            let mut expected = base.clone();
            for p in bank.iter() {
                let a = patch_activation(&q, p, Activation::Gelu);
                for (e, v) in expected.iter_mut().zip(&p.v_p) {
                    *e += a * v;
                }
            }
            for (a, b) in patched.iter().zip(expected.iter()) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn bank_rejects_second_unfrozen_and_duplicate_ids() {
        let mut bank = PatchBank::new(1);
        let mk = |id: u64, frozen: bool| Patch {
            id,
            k_p: vec![0.0],
            b_p: 0.0,
            v_p: vec![0.0],
            frozen,
            origin_example_id: 0,
        };
        bank.push(mk(0, false)).unwrap();
        assert!(bank.push(mk(1, false)).is_err());
        bank.freeze_unfrozen();
        bank.push(mk(1, false)).unwrap();
        assert!(bank.push(mk(1, true)).is_err());
        assert_eq!(bank.next_id(), 2);
    }
}
