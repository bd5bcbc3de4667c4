//! Minimal numeric substrate: dense matrices, the activation, a
//! reverse-mode tape, finite-difference validation, and the optimizer.

pub mod activation;
pub mod gradcheck;
pub mod matrix;
pub mod optimizer;
pub mod rng;
pub mod tape;

pub use activation::{gelu, gelu_derivative, Activation};
pub use gradcheck::grad_check;
pub use matrix::{affine, dot, Matrix};
pub use optimizer::{OptimizerConfig, OptimizerState};
pub use rng::{derive_seed, normal, seeded_rng, SeededRng};
pub use tape::{cross_entropy_scalar, layer_norm_row, GradTape, Gradients, ParamId, VarId};
