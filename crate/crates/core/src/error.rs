// SPDX-License-Identifier: MIT OR Apache-2.0

use thiserror::Error;

pub type Result<T, E = KcpdError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum KcpdError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("row {row} has zero norm")]
    ZeroNorm { row: usize },

    #[error("bandwidth must be resolved before evaluating the kernel")]
    UnresolvedBandwidth,

    #[error("all pairwise distances are zero; set the bandwidth explicitly")]
    DegenerateBandwidth,

    #[error("block [{s}, {e}] out of range for length {len} (1-based, inclusive)")]
    IndexOutOfRange { s: usize, e: usize, len: usize },

    #[error("invalid segmentation: {0}")]
    InvalidSegmentation(String),

    #[error("infeasible spacing: {k} change points with minimum spacing {ell} do not fit in length {t}")]
    InfeasibleSpacing { t: usize, k: usize, ell: usize },

    #[error("window {window} must be smaller than the sequence length {len}")]
    WindowTooLarge { window: usize, len: usize },

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("row {row}, column {col}: {msg}")]
    Csv { row: usize, col: usize, msg: String },

    #[error("environment variable {0} holding the API token is not set")]
    MissingToken(String),

    #[error("embedding service error: {0}")]
    Http(String),

    #[error("embedding service returned {got} vectors for {expected} inputs")]
    CountMismatch { expected: usize, got: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl KcpdError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Self::InvalidInput(msg.into())
    }
}
