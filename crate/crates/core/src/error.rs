use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the lab.
#[derive(Debug, Error)]
pub enum LabError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("empty matrix passed to {0}")]
    Empty(&'static str),

    #[error("svd did not converge for {rows}x{cols} matrix")]
    SvdNoConvergence { rows: usize, cols: usize },

    #[error("matrix is singular: {0}")]
    Singular(String),

    #[error("layer norm: row {row} has zero variance and eps = 0")]
    ConstantRow { row: usize },

    #[error("zero variance in pearson input")]
    ZeroVariance,

    #[error("undefined index: {0}")]
    Undefined(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("index {index} out of range (len {len})")]
    OutOfRange { index: usize, len: usize },

    #[error("{0}")]
    Config(String),

    #[error("matrix file {path}: {reason}")]
    MatrixFile { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, LabError>;

impl LabError {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        LabError::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LabError::Io {
            path: path.into(),
            source,
        }
    }
}
