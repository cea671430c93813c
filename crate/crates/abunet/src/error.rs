//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible operand shapes for a tape primitive.
    #[error("shape mismatch in {op}: {details}")]
    Shape { op: &'static str, details: String },

    /// Invalid user-facing configuration (activation name, variant, flag combination).
    #[error("config error: {0}")]
    Config(String),

    /// A blending-weight normalization denominator fell below the degeneracy threshold.
    #[error("degenerate normalization in activation layer {layer}: |denominator| = {denom:e} below threshold {threshold:e}")]
    DegenerateNormalization {
        layer: usize,
        denom: f64,
        threshold: f64,
    },

    /// NaN or Inf encountered where all values must be finite.
    #[error("non-finite value detected in {0}")]
    NonFinite(String),

    /// Tape misuse (backward before forward, non-scalar loss, stale ids).
    #[error("tape error: {0}")]
    Tape(String),

    /// Dataset files missing, truncated, or inconsistent.
    #[error("data error: {0}")]
    Data(String),

    /// Checkpoint serialization or compatibility failure.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// A gradient verification suite found analytic/numeric disagreement.
    #[error("gradient check failed: {0}")]
    GradCheck(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn shape(op: &'static str, details: impl Into<String>) -> Self {
        Error::Shape {
            op,
            details: details.into(),
        }
    }
}
