use thiserror::Error;

pub type Result<T, E = DashError> = std::result::Result<T, E>;

/// Broad failure category, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numeric,
    Protocol,
}

#[derive(Debug, Error)]
pub enum DashError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("rank deficient: |R[{column},{column}]| = {value:e} <= tolerance {tolerance:e}")]
    RankDeficient { column: usize, value: f64, tolerance: f64 },

    #[error("singular triangular factor: diagonal {index} = {value:e}")]
    SingularTriangular { index: usize, value: f64 },

    #[error("matrix is not positive definite (pivot {index} = {value:e})")]
    NotPositiveDefinite { index: usize, value: f64 },

    #[error("matrix is not symmetric (max deviation {0:e})")]
    NotSymmetric(f64),

    #[error("insufficient samples: n = {n}, need more than {required}")]
    InsufficientSamples { n: u64, required: u64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("duplicate party `{0}`")]
    DuplicateParty(String),

    #[error("invalid degrees of freedom {0}")]
    InvalidDf(f64),

    #[error("incomplete beta continued fraction did not converge (a = {a}, b = {b}, x = {x})")]
    NoConvergence { a: f64, b: f64, x: f64 },

    #[error("value {0:e} is outside the fixed-point range")]
    RangeOverflow(f64),

    #[error("missing share from party `{0}`")]
    MissingParty(String),

    #[error("duplicate share from party `{0}`")]
    DuplicateShare(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("corrupt message: {0}")]
    CorruptMessage(String),

    #[error("unsupported message version {found} (expected {expected})")]
    VersionMismatch { found: u16, expected: u16 },

    #[error("parse error at line {line}, column `{column}`: {message}")]
    Parse { line: usize, column: String, message: String },

    #[error("missing value at line {line}, column `{column}`")]
    MissingValue { line: usize, column: String },

    #[error("duplicate column `{0}`")]
    DuplicateColumn(String),

    #[error("unknown column `{0}`")]
    UnknownColumn(String),

    #[error("empty file: {0}")]
    EmptyFile(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl DashError {
    /// Stable machine-readable error code.
    pub fn code(&self) -> &'static str {
        match self {
            DashError::DimensionMismatch(_) => "DimensionMismatch",
            DashError::NonFinite { .. } => "NonFinite",
            DashError::RankDeficient { .. } => "RankDeficient",
            DashError::SingularTriangular { .. } => "SingularTriangular",
            DashError::NotPositiveDefinite { .. } => "NotPositiveDefinite",
            DashError::NotSymmetric(_) => "NotSymmetric",
            DashError::InsufficientSamples { .. } => "InsufficientSamples",
            DashError::ShapeMismatch(_) => "ShapeMismatch",
            DashError::EmptyInput(_) => "EmptyInput",
            DashError::DuplicateParty(_) => "DuplicateParty",
            DashError::InvalidDf(_) => "InvalidDF",
            DashError::NoConvergence { .. } => "NoConvergence",
            DashError::RangeOverflow(_) => "RangeOverflow",
            DashError::MissingParty(_) => "MissingParty",
            DashError::DuplicateShare(_) => "DuplicateShare",
            DashError::Protocol(_) => "ProtocolError",
            DashError::CorruptMessage(_) => "CorruptMessage",
            DashError::VersionMismatch { .. } => "VersionMismatch",
            DashError::Parse { .. } => "ParseError",
            DashError::MissingValue { .. } => "MissingValue",
            DashError::DuplicateColumn(_) => "DuplicateColumn",
            DashError::UnknownColumn(_) => "UnknownColumn",
            DashError::EmptyFile(_) => "EmptyFile",
            DashError::InvalidArgument(_) => "InvalidArgument",
            DashError::Io(_) => "IoError",
        }
    }

    /// An I/O error annotated with the path it concerns.
    pub fn io_at(path: &std::path::Path, e: std::io::Error) -> Self {
        DashError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            DashError::RankDeficient { .. }
            | DashError::SingularTriangular { .. }
            | DashError::NotPositiveDefinite { .. }
            | DashError::NotSymmetric(_)
            | DashError::InsufficientSamples { .. }
            | DashError::InvalidDf(_)
            | DashError::NoConvergence { .. }
            | DashError::RangeOverflow(_) => ErrorKind::Numeric,
            DashError::DuplicateParty(_)
            | DashError::MissingParty(_)
            | DashError::DuplicateShare(_)
            | DashError::Protocol(_)
            | DashError::CorruptMessage(_)
            | DashError::VersionMismatch { .. } => ErrorKind::Protocol,
            DashError::InvalidArgument(_) => ErrorKind::Usage,
            _ => ErrorKind::Data,
        }
    }
}
