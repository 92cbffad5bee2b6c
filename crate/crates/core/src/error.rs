use std::path::PathBuf;

use thiserror::Error;

/// Broad failure category, used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad arguments or configuration.
    Usage,
    /// Input data is missing, malformed, or too short.
    Data,
    /// A numerical routine failed or hit a degenerate configuration.
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("target column not found: {0}")]
    TargetNotFound(String),

    #[error("unparseable cell at row {row}, column {column:?}: {value:?}")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("zero-variance series: {0}")]
    ZeroVariance(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite input in {0}")]
    NonFinite(&'static str),

    #[error("rank-deficient matrix: {0}")]
    RankDeficient(String),

    #[error("eigendecomposition failed: {0}")]
    EigenFailure(String),

    #[error("slice {0} is empty")]
    EmptySlice(usize),

    #[error("slice {slice} holds {count} observations, at least {required} required")]
    SliceTooSmall {
        slice: usize,
        count: usize,
        required: usize,
    },

    #[error("forecast origin {origin}: {source}")]
    AtOrigin {
        origin: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidArgument(_) | Error::Json(_) => ErrorKind::Usage,
            Error::Io { .. }
            | Error::Csv(_)
            | Error::TargetNotFound(_)
            | Error::Parse { .. }
            | Error::InsufficientData(_)
            | Error::ZeroVariance(_)
            | Error::DimensionMismatch(_)
            | Error::NonFinite(_) => ErrorKind::Data,
            Error::RankDeficient(_)
            | Error::EigenFailure(_)
            | Error::EmptySlice(_)
            | Error::SliceTooSmall { .. } => ErrorKind::Numerical,
            Error::AtOrigin { source, .. } => source.kind(),
        }
    }

    pub(crate) fn at_origin(origin: usize, source: Error) -> Self {
        Error::AtOrigin {
            origin,
            source: Box::new(source),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
