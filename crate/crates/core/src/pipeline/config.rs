//! Run configuration: one JSON document drives an entire pipeline run.
//!
//! Every stage seed derives deterministically from the single global seed,
//! and the model's vocabulary/label sizes are wired from the generator
//! config so the two can never drift apart.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::GenConfig;
use crate::editing::{EditMethodKind, FinetuneConfig};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, TrainConfig};
use crate::numerics::rng::derive_seed;
use crate::numerics::OptimizerConfig;
use crate::patching::PatchLossConfig;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsConfig {
    pub corpus_dir: PathBuf,
    pub checkpoint_dir: PathBuf,
    pub report_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            corpus_dir: PathBuf::from("artifacts/corpus"),
            checkpoint_dir: PathBuf::from("artifacts/checkpoints"),
            report_dir: PathBuf::from("artifacts/reports"),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: PathsConfig,
    pub gen: GenConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub patch_loss: PatchLossConfig,
    pub finetune: FinetuneConfig,
    /// Methods the `reproduce` pipeline runs, in row order after the
    /// Original row.
    pub methods: Vec<EditMethodKind>,
    pub train_on_all_languages: bool,
    /// Fraction of the training split sampled for the locality metric.
    pub locality_train_fraction: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            paths: PathsConfig::default(),
            gen: GenConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig {
                epochs: 10,
                batch_size: 32,
                optimizer: OptimizerConfig {
                    learning_rate: 1e-3,
                    weight_decay: 0.01,
                    warmup_updates: 100,
                    epsilon: 1e-8,
                    ..OptimizerConfig::default()
                },
                seed: 0,
            },
            patch_loss: PatchLossConfig::default(),
            finetune: FinetuneConfig::default(),
            methods: EditMethodKind::ALL.to_vec(),
            train_on_all_languages: false,
            locality_train_fraction: 0.1,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_value(value)
    }

    pub fn from_value(value: serde_json::Value) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_value(value)
            .map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        Ok(cfg)
    }

    /// SHA-256 of the canonical JSON form; embedded in every artifact.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        crate::corpus::io::sha256_hex(json.as_bytes())
    }

    /// The config with derived sub-seeds and wired dimensions filled in.
    pub fn effective(&self) -> Result<RunConfig> {
        let mut eff = self.clone();
        eff.gen.seed = derive_seed(self.seed, "corpus");
        eff.model.seed = derive_seed(self.seed, "model");
        eff.train.seed = derive_seed(self.seed, "train");
        eff.model.vocab_size = eff.gen.vocab_size();
        eff.model.n_classes = eff.gen.n_classes();
        eff.gen.validate()?;
        eff.model.validate()?;
        eff.patch_loss.validate()?;
        if !(0.0 < eff.locality_train_fraction && eff.locality_train_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "locality_train_fraction must lie in (0, 1], got {}",
                eff.locality_train_fraction
            )));
        }
        let max_sentence = 1 + 3 * if eff.gen.nli_mode { 2 } else { 1 } + eff.gen.fillers_per_sentence.1;
        if max_sentence > eff.model.max_len {
            return Err(Error::Config(format!(
                "sentences up to {max_sentence} tokens exceed model max_len {}",
                eff.model.max_len
            )));
        }
        Ok(eff)
    }

    pub fn edit_seed(&self, kind: EditMethodKind) -> u64 {
        derive_seed(self.seed, &format!("edit:{}", kind.slug()))
    }

    pub fn error_set_seed(&self, kind: EditMethodKind) -> u64 {
        derive_seed(self.seed, &format!("error-set:{}", kind.slug()))
    }

    pub fn locality_seed(&self) -> u64 {
        derive_seed(self.seed, "locality")
    }
}

/// Applies a dotted-path override like `gen.n_facts=500` onto a config
/// JSON value. The right-hand side parses as JSON when possible and falls
/// back to a plain string.
pub fn apply_override(value: &mut serde_json::Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment.split_once('=').ok_or_else(|| {
        Error::Config(format!("override `{assignment}` is not of the form key.path=value"))
    })?;
    let new_value: serde_json::Value = serde_json::from_str(raw)
        .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));

    let mut cursor = value;
    let segments: Vec<&str> = path.split('.').collect();
    for (i, seg) in segments.iter().enumerate() {
        if !cursor.is_object() {
            return Err(Error::Config(format!(
                "override `{path}`: `{}` is not an object",
                segments[..i].join(".")
            )));
        }
        let map = cursor.as_object_mut().unwrap();
        if i + 1 == segments.len() {
            map.insert(seg.to_string(), new_value);
            return Ok(());
        }
        cursor = map
            .entry(seg.to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    unreachable!("split never yields zero segments");
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sub_seeds_derive_from_global() {
        let cfg = RunConfig::default();
        let eff = cfg.effective().unwrap();
        assert_eq!(eff.gen.seed, derive_seed(42, "corpus"));
        assert_eq!(eff.model.seed, derive_seed(42, "model"));
        assert_ne!(eff.gen.seed, eff.model.seed);
        assert_eq!(eff.model.vocab_size, eff.gen.vocab_size());
    }

    #[test]
    fn hash_changes_with_any_leaf() {
        let a = RunConfig::default();
        let mut b = RunConfig::default();
        b.gen.n_facts += 1;
        assert_ne!(a.config_hash(), b.config_hash());
    }

    #[test]
    fn overrides_reach_nested_leaves() {
        let mut v = serde_json::to_value(RunConfig::default()).unwrap();
        apply_override(&mut v, "gen.n_facts=500").unwrap();
        apply_override(&mut v, "train.optimizer.learning_rate=0.01").unwrap();
        apply_override(&mut v, "seed=7").unwrap();
        let cfg = RunConfig::from_value(v).unwrap();
        assert_eq!(cfg.gen.n_facts, 500);
        assert_eq!(cfg.train.optimizer.learning_rate, 0.01);
        assert_eq!(cfg.seed, 7);
    }

    #[test]
    fn bad_override_shapes_are_rejected() {
        let mut v = serde_json::to_value(RunConfig::default()).unwrap();
        assert!(apply_override(&mut v, "no-equals-sign").is_err());
        assert!(apply_override(&mut v, "seed.deeper=1").is_err());
    }
}
