//! Command-line front end: model and policy files, experiment configuration
//! and the experiment runner.

pub mod config;
pub mod error;
pub mod files;
pub mod run;

pub use config::{Cli, ExperimentConfig, Mode};
pub use error::CliError;
pub use run::{run_experiment, Summary};
