//! Config-driven end-to-end runs backing the CLI.

mod commands;
mod config;

pub use commands::{
    base_checkpoint_path, cmd_edit, cmd_error_set, cmd_eval, cmd_gen_data, cmd_reproduce,
    cmd_train_base, edited_checkpoint_path, ErrorSetSummary, ReproduceSummary,
};
pub use config::{apply_override, PathsConfig, RunConfig};
