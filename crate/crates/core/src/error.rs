use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = PgpError> = std::result::Result<T, E>;

/// Coarse classification used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum PgpError {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("matrix is not positive definite even with jitter {jitter:e}")]
    NotPositiveDefinite { jitter: f64 },

    #[error("non-finite gradient entry at coordinate {index} ({value})")]
    NonFiniteGradient { index: usize, value: f64 },

    #[error("non-finite value produced: {0}")]
    NonFinite(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("column `{0}` is constant on the training split")]
    ConstantColumn(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("model file: {0}")]
    Format(String),

    #[error("training aborted at iteration {iteration}: {source}")]
    TrainingAborted {
        iteration: usize,
        #[source]
        source: Box<PgpError>,
    },
}

impl PgpError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PgpError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dim(context: &'static str, expected: usize, actual: usize) -> Self {
        PgpError::Dimension {
            context,
            expected,
            actual,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            PgpError::Dimension { .. } | PgpError::Config(_) => ErrorKind::Config,
            PgpError::NotPositiveDefinite { .. }
            | PgpError::NonFiniteGradient { .. }
            | PgpError::NonFinite(_) => ErrorKind::Numerical,
            PgpError::Data(_)
            | PgpError::ConstantColumn(_)
            | PgpError::Io { .. }
            | PgpError::Csv(_)
            | PgpError::Format(_) => ErrorKind::Data,
            PgpError::TrainingAborted { source, .. } => source.kind(),
        }
    }
}

pub(crate) fn ensure_dim(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(PgpError::dim(context, expected, actual))
    }
}
