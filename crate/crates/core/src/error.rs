use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ParamsError {
    #[error("parameter `{0}` must be positive and finite")]
    NotPositive(&'static str),
    #[error("invalid parameters: {0}")]
    Invalid(String),
}

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("dimension mismatch: expected {expected}, got {actual} ({what})")]
    Dimension {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("unsupported checkpoint format `{format}` version {version}")]
    Version { format: String, version: u32 },
    #[error("observation mode mismatch: checkpoint uses {found}, pipeline expects {expected}")]
    ObservationMode { expected: String, found: String },
    #[error("invalid network: {0}")]
    Invalid(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed checkpoint {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("series too short: need at least {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("window [{start}, {end}] s lies outside the log span [{log_start}, {log_end}] s")]
    Window {
        start: f64,
        end: f64,
        log_start: f64,
        log_end: f64,
    },
    #[error("trajectory log: {0}")]
    Log(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Params(#[from] ParamsError),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed trainer state {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}
