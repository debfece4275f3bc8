use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o failure: {0}")]
    Io(#[from] io::Error),

    #[error("bad magic bytes: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u8),

    #[error("truncated file: header implies {expected} bytes, found {found}")]
    TruncatedFile { expected: usize, found: usize },

    #[error("non-finite entry at row {row}, column {col}")]
    NonFiniteEntry { row: usize, col: usize },

    #[error("label {label} at sample {index} is out of range for {num_classes} classes")]
    LabelOutOfRange {
        index: usize,
        label: u32,
        num_classes: u32,
    },

    #[error("csv parse failure: {0}")]
    Csv(String),

    #[error("matrix is rank deficient: {0}")]
    RankDeficient(String),

    #[error("matrix is not positive semi-definite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("shape mismatch: {0}")]
    ShapeError(String),

    #[error("coefficient vector norm {norm} exceeds 1")]
    NormViolation { norm: f64 },

    #[error("singular values are not sorted in nonincreasing order")]
    UnsortedSigma,

    #[error("singular value {value} outside [0, 1]")]
    SigmaOutOfRange { value: f64 },

    #[error("index {index} outside 1..={max}")]
    IndexOutOfRange { index: usize, max: usize },

    #[error("input matrix is identically zero")]
    ZeroMatrix,

    #[error("column {column} is not a probability vector (sum {sum})")]
    NotAProbability { column: usize, sum: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    /// Stable variant name, printed by the command-line front end.
    pub fn name(&self) -> &'static str {
        match self {
            Error::Io(_) => "IoError",
            Error::BadMagic { .. } => "BadMagic",
            Error::UnsupportedVersion(_) => "UnsupportedVersion",
            Error::TruncatedFile { .. } => "TruncatedFile",
            Error::NonFiniteEntry { .. } => "NonFiniteEntry",
            Error::LabelOutOfRange { .. } => "LabelOutOfRange",
            Error::Csv(_) => "CsvError",
            Error::RankDeficient(_) => "RankDeficient",
            Error::NotPsd { .. } => "NotPsd",
            Error::ShapeError(_) => "ShapeError",
            Error::NormViolation { .. } => "NormViolation",
            Error::UnsortedSigma => "UnsortedSigma",
            Error::SigmaOutOfRange { .. } => "SigmaOutOfRange",
            Error::IndexOutOfRange { .. } => "IndexOutOfRange",
            Error::ZeroMatrix => "ZeroMatrix",
            Error::NotAProbability { .. } => "NotAProbability",
            Error::InvalidArgument(_) => "InvalidArgument",
        }
    }
}

pub(crate) fn shape_err(msg: impl Into<String>) -> Error {
    Error::ShapeError(msg.into())
}
