use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("ragged rows: row {row} has {found} fields, expected {expected}")]
    RaggedRows {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("non-numeric field {field:?} at row {row}, column {column}")]
    NonNumeric {
        row: usize,
        column: usize,
        field: String,
    },

    #[error("non-finite value at row {row}, column {column}")]
    NonFinite { row: usize, column: usize },

    #[error("n < 2: representation needs at least two samples (got {0})")]
    TooFewSamples(usize),

    #[error("representation has no feature columns")]
    NoFeatures,

    #[error("bad magic: expected \"REPM\"")]
    BadMagic,

    #[error("unsupported REPM version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated payload: expected {expected} values, found {found}")]
    TruncatedPayload { expected: usize, found: usize },

    #[error("degenerate representation: {0}")]
    Degenerate(String),

    #[error("representation {0:?} is not normalized")]
    NotNormalized(String),

    #[error("sample count mismatch: {0} vs {1}")]
    SampleMismatch(usize, usize),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    Asymmetric(f64),

    #[error("Gram matrix is not positive semidefinite (min eigenvalue {0:e})")]
    NotPsd(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("pair too close for relative error (reference {0:e})")]
    PairTooClose(f64),

    #[error("grid too small: need at least 3 sizes, got {0}")]
    GridTooSmall(usize),

    #[error("pair ({a}, {b}): {source}")]
    Pair {
        a: String,
        b: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerics rather than of the inputs' shape or encoding.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Degenerate(_)
            | Error::NotPsd(_)
            | Error::Asymmetric(_)
            | Error::UndefinedCorrelation(_)
            | Error::PairTooClose(_) => true,
            Error::Pair { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
