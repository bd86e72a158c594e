//! Experiment front end: dataset generation, training, Monte Carlo
//! evaluation, ratio sweeps and k-fold runs. Every command writes its outputs
//! into a single run directory.

pub mod commands;
pub mod config;
pub mod run_dir;

use std::path::{Path, PathBuf};

use mctd_core::ErrorKind;

pub use commands::{run, Cli, Command};
pub use config::ExperimentConfig;

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_NUMERIC: u8 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config file {path}: {message}")]
    Config { path: PathBuf, message: String },
}

impl CliError {
    pub fn config(path: &Path, err: impl std::fmt::Display) -> Self {
        Self::Config {
            path: path.to_path_buf(),
            message: err.to_string(),
        }
    }
}

/// Process exit status for a failed command.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<mctd_core::Error>() {
            return match e.kind() {
                ErrorKind::Config => EXIT_CONFIG,
                ErrorKind::Data | ErrorKind::Io => EXIT_DATA,
                ErrorKind::Numeric => EXIT_NUMERIC,
            };
        }
        if cause.is::<CliError>() || cause.is::<toml::de::Error>() {
            return EXIT_CONFIG;
        }
        if cause.is::<std::io::Error>() || cause.is::<csv::Error>() || cause.is::<serde_json::Error>() {
            return EXIT_DATA;
        }
    }
    1
}
