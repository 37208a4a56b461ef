//! Error taxonomy shared across the library.
//!
//! Variants are grouped by what the caller can do about them: shape and
//! domain errors indicate misuse, convergence and divergence errors carry
//! enough state to report where iteration stopped, and data errors cover
//! malformed or degenerate inputs.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("no convergence after {iterations} iterations: {context}")]
    Convergence { iterations: usize, context: String },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("degenerate scale: {0}")]
    DegenerateScale(String),

    #[error("unstable spectrum: {0}")]
    UnstableSpectrum(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("training diverged at epoch {epoch}: {context}")]
    Diverged { epoch: usize, context: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;
