//! Command-line pipeline: ingestion, metrics, mining, analyses and reports.
//!
//! Each command reads its inputs once, computes everything in memory and
//! then writes its outputs together with a run manifest recording the
//! argv, seed and SHA-256 digests of the config, inputs and outputs.

pub mod args;
mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod report;

pub use args::Cli;
pub use commands::{Aggregate, MeasureGroup, MeasureOutput, MeasureSlice};
pub use error::{CliError, ErrorKind};

use std::path::PathBuf;

/// Runs one command and returns the paths it wrote.
pub fn run(cli: &Cli, argv: Vec<String>) -> Result<Vec<PathBuf>, CliError> {
    commands::dispatch(cli, argv)
}
