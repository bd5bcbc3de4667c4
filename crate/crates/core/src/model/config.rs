//! Model hyperparameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Activation;

/// Architecture of the compact encoder classifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Embedding width.
    pub d_model: usize,
    /// FFN inner width (number of key-value memory slots per layer).
    pub d_ff: usize,
    /// Encoder block count.
    pub n_layers: usize,
    /// Attention head count; must divide `d_model`.
    pub n_heads: usize,
    /// Token vocabulary size (set by the corpus generator in pipelines).
    pub vocab_size: usize,
    /// Output label count.
    pub n_classes: usize,
    /// Sequence length cap.
    pub max_len: usize,
    pub activation: Activation,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            d_ff: 128,
            n_layers: 2,
            n_heads: 4,
            vocab_size: 256,
            n_classes: 2,
            max_len: 32,
            activation: Activation::Gelu,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Validates every constraint and reports all violations at once.
    pub fn validate(&self) -> Result<()> {
        let mut violations = Vec::new();
        if self.d_model == 0 {
            violations.push("d_model must be positive".to_string());
        }
        if self.d_ff == 0 {
            violations.push("d_ff must be positive".to_string());
        }
        if self.n_layers == 0 {
            violations.push("n_layers must be positive".to_string());
        }
        if self.n_heads == 0 {
            violations.push("n_heads must be positive".to_string());
        } else if self.d_model % self.n_heads != 0 {
            violations.push(format!(
                "d_model not divisible by n_heads ({} % {} != 0)",
                self.d_model, self.n_heads
            ));
        }
        if self.vocab_size < 2 {
            violations.push("vocab_size must be at least 2".to_string());
        }
        if self.n_classes < 2 {
            violations.push("n_classes must be at least 2".to_string());
        }
        if self.max_len < 4 {
            violations.push("max_len must be at least 4".to_string());
        }
        if violations.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(violations.join("; ")))
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// Base-training hyperparameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: crate::numerics::OptimizerConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 32,
            optimizer: crate::numerics::OptimizerConfig::default(),
            seed: 0,
        }
    }
}
