//! Configuration, experiment orchestration and artifact output for the `ptysim` binary.

pub mod config;
pub mod experiment;
pub mod io;

pub use config::{ConfigError, ExperimentConfig};
pub use experiment::{run_experiment, ExperimentError, ExperimentReport};
