use std::io;
use std::path::Path;

use pfrc_core::experiment::ExperimentError;
use pfrc_core::filters::FilterError;
use pfrc_core::models::{DatasetError, ModelError};
use pfrc_core::oracles::OracleError;
use pfrc_core::ssm::SsmError;
use pfrc_core::thresholds::ScheduleError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Simulation(#[from] SsmError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Config(_) => "config",
            CliError::Io { .. } => "io",
            CliError::Dataset(_) => "dataset",
            CliError::Model(_) => "model",
            CliError::Simulation(_) => "simulation",
            CliError::Schedule(_) => "schedule",
            CliError::Filter(_) => "filter",
            CliError::Experiment(_) => "experiment",
            CliError::Oracle(_) => "oracle",
            CliError::Json(_) => "json",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            _ => 1,
        }
    }

    /// Single-line `error: kind=... message="..."` form for stderr.
    pub fn machine_line(&self) -> String {
        let message = self
            .to_string()
            .replace('\\', "\\\\")
            .replace('"', "\\\"")
            .replace(['\n', '\r'], " ");
        format!("error: kind={} message=\"{}\"", self.kind(), message)
    }
}
