//! Orchestration for the `dskd` command: configuration, pipeline stages,
//! ablation sweeps, run manifests and CSV/SVG reports.

use std::fmt::Display;

pub mod config;
pub mod manifest;
pub mod pipeline;
pub mod report;
pub mod sweep;

pub use config::{Axis, RunConfig};

/// Exit code for configuration and pre-flight failures.
pub const EXIT_VALIDATION: i32 = 2;
/// Exit code for failures while a stage is running.
pub const EXIT_RUNTIME: i32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error("stage {stage} failed: {message}")]
    Runtime { stage: String, message: String },
}

impl CliError {
    pub fn validation(msg: impl Display) -> Self {
        CliError::Validation(msg.to_string())
    }

    pub fn runtime(stage: &str, msg: impl Display) -> Self {
        CliError::Runtime {
            stage: stage.to_string(),
            message: msg.to_string(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Runtime { .. } => EXIT_RUNTIME,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
