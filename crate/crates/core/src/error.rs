use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("probability {0} is outside the open interval (0, 1)")]
    InvalidProbability(f64),

    #[error("degrees of freedom must be at least 1")]
    InvalidDegreesOfFreedom,

    #[error("{what} needs at least {need} values, got {got}")]
    TooFewValues {
        what: &'static str,
        need: usize,
        got: usize,
    },

    #[error("distribution has no samples")]
    EmptyDistribution,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("matrix shape {rows}x{cols} does not match {len} values")]
    ShapeMismatch { rows: usize, cols: usize, len: usize },

    #[error("dimension mismatch: expected {expected} columns, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("zero-variance column(s): {}", .names.join(", "))]
    ZeroVarianceColumn { columns: Vec<usize>, names: Vec<String> },

    #[error("singular value decomposition did not converge after {sweeps} sweeps")]
    SvdNoConvergence { sweeps: usize },

    #[error("component {component} is rank deficient (singular value below tolerance)")]
    RankDeficient { component: usize },

    #[error("rank q = {q} is outside 1..={p}")]
    RankOutOfRange { q: usize, p: usize },

    #[error("component index {index} is out of range for p = {p}")]
    ComponentOutOfRange { index: usize, p: usize },

    #[error("component set is empty")]
    EmptyComponentSet,

    #[error("no component exceeds its threshold: no batch-level anomaly evidence")]
    EmptyAffectedSet,

    #[error("threshold source `{0}` requires the training bootstrap reference")]
    MissingBootstrapReference(&'static str),

    #[error("threshold source `{source_name}` is not supported by {method}")]
    UnsupportedThresholdSource {
        source_name: &'static str,
        method: &'static str,
    },

    #[error("covariance matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("labels contain a single class; need at least one positive and one negative")]
    SingleClass,

    #[error("row {row}: {message}")]
    MalformedRow { row: usize, message: String },

    #[error("{count} malformed row(s); first: row {first_row}: {first_message}")]
    MalformedRows {
        count: usize,
        first_row: usize,
        first_message: String,
    },

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("input contains no data rows")]
    EmptyInput,

    #[error("dataset has {got} rows, need at least {need}")]
    DatasetTooSmall { need: usize, got: usize },

    #[error("pool `{pool}` has {available} rows, {requested} requested")]
    InsufficientPool {
        pool: String,
        available: usize,
        requested: usize,
    },

    #[error("artifact format: {0}")]
    Format(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidProbability(_)
            | Error::InvalidDegreesOfFreedom
            | Error::InvalidParameter(_)
            | Error::RankOutOfRange { .. }
            | Error::ComponentOutOfRange { .. }
            | Error::EmptyComponentSet
            | Error::MissingBootstrapReference(_)
            | Error::UnsupportedThresholdSource { .. } => ErrorKind::Usage,
            Error::SvdNoConvergence { .. }
            | Error::RankDeficient { .. }
            | Error::NotPositiveDefinite => ErrorKind::Numerical,
            Error::File { source, .. } => source.kind(),
            _ => ErrorKind::Data,
        }
    }

    pub(crate) fn in_file(self, path: impl Into<PathBuf>) -> Error {
        Error::File {
            path: path.into(),
            source: Box::new(self),
        }
    }
}
