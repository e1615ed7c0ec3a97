//! Batch runner for the obstacle/Lorentz lab: config parsing, pipelines and report files.

pub mod config;
pub mod experiment;
pub mod report;

pub use config::{ConfigError, ExperimentConfig, Format};
pub use experiment::{run_experiment, Command, Outcome};
pub use report::emit_report;
