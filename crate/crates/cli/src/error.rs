use std::path::Path;

use taco_core::error::{EvalError, PolicyError, TrainError};

/// Every failure maps to one exit code and one JSON line on stderr.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Checkpoint(String),
    #[error("{0}")]
    EvalFailed(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Other(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Config(_) => 3,
            CliError::Io(_) => 4,
            CliError::Checkpoint(_) => 5,
            CliError::EvalFailed(_) => 6,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Other(_) => "error",
            CliError::Usage(_) => "usage",
            CliError::Config(_) => "config",
            CliError::Io(_) => "io",
            CliError::Checkpoint(_) => "checkpoint",
            CliError::EvalFailed(_) => "eval_failed",
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::json!({
            "error": self.kind(),
            "code": self.exit_code(),
            "message": self.to_string(),
        })
        .to_string()
    }
}

impl From<PolicyError> for CliError {
    fn from(e: PolicyError) -> Self {
        match e {
            PolicyError::Io { .. } => CliError::Io(e.to_string()),
            _ => CliError::Checkpoint(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Policy(p) => p.into(),
            TrainError::Params(_) | TrainError::Config(_) => CliError::Config(e.to_string()),
            TrainError::Io { .. } => CliError::Io(e.to_string()),
            TrainError::Parse { .. } => CliError::Checkpoint(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Io { .. } => CliError::Io(e.to_string()),
            _ => CliError::Other(e.to_string()),
        }
    }
}
