//! Config-driven batch front end for the Volterra solver suite.

use thiserror::Error;

pub mod config;
pub mod report;
pub mod run;

pub use config::{apply_overrides, ExperimentKind, RunConfig};
pub use report::{emit, EmitFormat, ResultBundle};
pub use run::run;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(String),
    #[error(transparent)]
    Solver(#[from] volterra_core::Error),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Io(_) => "io",
            CliError::Solver(_) => "solver",
        }
    }
}
