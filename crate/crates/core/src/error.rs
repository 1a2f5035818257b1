//! Error type shared by every module of the crate.

use thiserror::Error;

/// Failure modes of the numerical routines.
///
/// Each variant corresponds to one class of contract violation; the CLI maps
/// parameter/validation variants to exit code 2 and numerical ones to 1.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of a rate function.
    #[error("domain error: {0}")]
    Domain(String),

    /// A model parameter violates its admissible range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A series or iteration failed to reach its tolerance within the cap.
    #[error("convergence failure: {0}")]
    Convergence(String),

    /// The truncation window is too small for the declared tolerance.
    #[error("window too small: {msg} (suggested window [{}, {}])", suggested.0, suggested.1)]
    Window { msg: String, suggested: (i64, i64) },

    /// Root bracketing failed because the target lies outside the representable range.
    #[error("range error: {0}")]
    Range(String),

    /// Adaptive time stepping collapsed.
    #[error("integration failed at t = {t}: {msg} (indices {}..={})", indices.0, indices.1)]
    Stiffness { t: f64, msg: String, indices: (i64, i64) },

    /// A coefficient turned negative during a positivity-preserving evolution.
    #[error("negative value {value:e} at index {index}, t = {t}")]
    Negativity { t: f64, index: i64, value: f64 },

    /// Floating-point cancellation makes the requested value unreliable.
    #[error("precision loss: {0}")]
    Precision(String),

    /// Right-tail extrapolation is unreliable.
    #[error("extrapolation unreliable: {0}")]
    Extrapolation(String),

    /// The tail-parameter recovery of a peak state is unreliable.
    #[error("decomposition unreliable: {0}")]
    Decomposition(String),

    /// A hypothesis required by a formula is violated.
    #[error("hypothesis violated: {0}")]
    Hypothesis(String),

    /// Initial data are not admissible for the fixed-point construction.
    #[error("inadmissible data: {0}")]
    Admissibility(String),

    /// The fixed-point map failed to contract.
    #[error("no contraction: {0}")]
    NoContraction(String),

    /// Adaptive quadrature did not reach its tolerance.
    #[error("quadrature did not converge (achieved {achieved:e})")]
    Quadrature { achieved: f64 },

    /// Input is degenerate for the requested quantity (e.g. a zero denominator).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Filesystem error while serializing results.
    #[error(transparent)]
    Io(#[from] std::io::Error),

    /// JSON (de)serialization error.
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Whether the error stems from user-supplied parameters rather than numerics.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter(_) | Error::Domain(_) | Error::Hypothesis(_) | Error::Admissibility(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
