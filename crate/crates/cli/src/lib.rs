//! Batch driver: configuration files, run orchestration and report output
//! for the `mihd` binary.

pub mod commands;
pub mod config;
pub mod manifest;

pub use commands::CliError;
pub use config::{parse_config, ConfigError, RunConfig};
pub use manifest::RunManifest;
