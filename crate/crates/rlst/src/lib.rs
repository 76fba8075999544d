//! Corpus and word-vector files, checkpoints, configuration and the
//! experiment driver behind the `rlst` command.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod io;
pub mod pipeline;

pub use config::ExperimentConfig;
pub use error::{CliError, Result};
