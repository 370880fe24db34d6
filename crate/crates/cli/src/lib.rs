//! Config-driven experiments on top of the `harmofl` simulator: training
//! runs, ablations, checkpoints, dataset files and loss-landscape export.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset_io;
pub mod error;
pub mod landscape;
pub mod metrics;

pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
