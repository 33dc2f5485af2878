//! Command-line front end: TOML experiment configs, the training and probe
//! subcommands, and CSV/JSON report emission.

pub mod commands;
pub mod config;
pub mod experiment;
pub mod report;
pub mod reproduce;

pub use config::{ConfigError, ExperimentConfig};
pub use experiment::{CliError, CliResult};
