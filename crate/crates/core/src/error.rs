use thiserror::Error;

use crate::autodiff::Dims;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch ({lhs} vs {rhs})")]
    DimMismatch {
        op: &'static str,
        lhs: String,
        rhs: String,
    },

    #[error("{op}: value outside the operation's domain ({detail})")]
    Domain { op: &'static str, detail: String },

    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },

    #[error("expected a scalar loss node, got {dims} x {channels} channel(s)")]
    NotScalar { dims: Dims, channels: usize },

    #[error("unknown node id {0}")]
    UnknownNode(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported NIfTI datatype code {0}")]
    UnsupportedDatatype(i16),

    #[error("dataset configuration error: {0}")]
    DatasetConfig(String),

    #[error("numerical abort at step {step}: loss = {loss}")]
    NumericalAbort { step: usize, loss: f64 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn dims(op: &'static str, lhs: impl ToString, rhs: impl ToString) -> Self {
        Error::DimMismatch {
            op,
            lhs: lhs.to_string(),
            rhs: rhs.to_string(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
