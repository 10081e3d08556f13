//! Experiment orchestration for the `ovfl` simulator: configuration files,
//! grid expansion, shipped presets and CSV output.

pub mod config;
pub mod presets;
pub mod runner;

pub use config::{Cell, ConfigError, RunConfig};
pub use runner::{run_experiment, run_single, ExperimentSummary, RunOutput};
