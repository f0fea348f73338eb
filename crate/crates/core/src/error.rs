use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = MoewError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum MoewError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("parse error at row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },
    #[error("invalid dataset: {0}")]
    InvalidData(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("training diverged at step {step}: non-finite loss")]
    Divergence { step: usize },
    #[error("importance estimation error: {0}")]
    Estimation(String),
    #[error("metric error: {0}")]
    Metric(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("candidate set too large: {count} points exceeds cap {cap}")]
    Size { count: usize, cap: usize },
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },
    #[error("run error: {0}")]
    Run(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
}

impl MoewError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        MoewError::Io {
            path: path.into(),
            source,
        }
    }
}
