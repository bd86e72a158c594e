use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure class, used by front-ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in `{op}`: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid shape for `{op}`: {detail}")]
    InvalidShape { op: &'static str, detail: String },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("invalid value for `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("non-finite values produced by layer `{layer}`")]
    NonFinite { layer: String },

    #[error("non-finite gradient for parameter `{param}`")]
    NonFiniteGradient { param: String },

    #[error("Monte Carlo sample {index} produced non-finite predictions")]
    NanSample { index: usize },

    #[error("training diverged at epoch {epoch}, batch {batch} (loss = {loss})")]
    Divergence { epoch: usize, batch: usize, loss: f64 },

    #[error("{path}:{line}: {message}")]
    Csv {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("{path}:{line}: duplicate (series_id, t) pair ({series_id}, {t})")]
    DuplicateKey {
        path: PathBuf,
        line: u64,
        series_id: String,
        t: i64,
    },

    #[error("{path}: missing required column `{column}`")]
    MissingColumn { path: PathBuf, column: String },

    #[error("feature count mismatch: model expects {expected}, data has {actual}")]
    FeatureMismatch { expected: usize, actual: usize },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("unsupported checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    CsvBackend(#[from] csv::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidParameter { .. } | Error::Checkpoint(_) => ErrorKind::Config,
            Error::Csv { .. }
            | Error::DuplicateKey { .. }
            | Error::MissingColumn { .. }
            | Error::FeatureMismatch { .. }
            | Error::Data(_)
            | Error::CsvBackend(_)
            | Error::Json(_) => ErrorKind::Data,
            Error::ShapeMismatch { .. }
            | Error::InvalidShape { .. }
            | Error::NonScalarLoss(_)
            | Error::NonFinite { .. }
            | Error::NonFiniteGradient { .. }
            | Error::NanSample { .. }
            | Error::Divergence { .. } => ErrorKind::Numeric,
            Error::Io(_) => ErrorKind::Io,
        }
    }

    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
