//! Twin-experiment driver: configuration, pipelines and artifact handling
//! behind the `hmcsmoother` binary.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod error;
pub mod experiment;

pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
pub use experiment::{Experiment, Mode};
