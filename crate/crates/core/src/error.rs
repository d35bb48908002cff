use std::path::PathBuf;

use crate::optimizer::ConvergenceRecord;

/// Errors raised anywhere in the inversion pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical failure in {op}: {detail}")]
    NumericalFailure { op: &'static str, detail: String },

    #[error("point {point:?} lies outside the mesh domain")]
    OutOfDomain { point: Vec<f64> },

    #[error("line search failed after {backtracks} backtracks at Gauss-Newton iteration {iteration}")]
    LineSearchFailure {
        iteration: usize,
        backtracks: usize,
        /// Last accepted iterate and the record up to the failure.
        partial: Box<(Vec<f64>, ConvergenceRecord)>,
    },

    #[error("error-sample {index} failed: {source}")]
    Sample {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn numerical(op: &'static str, detail: impl Into<String>) -> Self {
        Error::NumericalFailure {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn at_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Process exit status for this error: 2 configuration, 3 numerical, 1 I/O.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::Config(_) | Error::InvalidArgument(_) | Error::OutOfDomain { .. } => 2,
            Error::NumericalFailure { .. } | Error::LineSearchFailure { .. } => 3,
            Error::Io { .. } | Error::Json(_) => 1,
            Error::Stage { .. } | Error::Sample { .. } => 3,
        }
    }

    /// The innermost error, skipping stage and sample wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } | Error::Sample { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
