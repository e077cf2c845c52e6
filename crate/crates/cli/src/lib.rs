//! Experiment runner for warped structured kernel interpolation: synthetic
//! data, config-driven runs, metrics and CSV artifacts.

pub mod config;
pub mod error;
pub mod experiments;
pub mod io;
pub mod metrics;
pub mod synth;
pub mod validate;

pub use config::ExperimentConfig;
pub use error::CliError;
pub use experiments::{RunOutput, RunReport};
