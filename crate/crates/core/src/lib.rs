//! patchforge-core (build in progress)
pub mod corpus;
pub mod editing;
pub mod error;
pub mod eval;
pub mod model;
pub mod numerics;
pub mod patching;
pub mod pipeline;

pub use corpus::{Dataset, EditExample, GenConfig, Label};
pub use editing::{EditMethod, EditMethodKind, EditReport, EditedModel, TriggerPolicy};
pub use error::{Error, Result};
pub use eval::MetricsReport;
pub use model::{Model, ModelConfig, TokenSequence, TrainConfig};
pub use numerics::{Activation, GradTape, Matrix, OptimizerConfig, OptimizerState};
pub use patching::{Patch, PatchBank, PatchLossConfig};
pub use pipeline::RunConfig;
