//! Error type shared across the crate.

/// Errors produced by controllers, estimators, and simulators.
#[derive(Debug, Clone, thiserror::Error)]
pub enum Error {
    /// A parameter violates its documented precondition.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// An evaluation point lies outside the operation's domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// A NaN or infinity reached a numeric input or intermediate.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// An online estimator had no admissible samples.
    #[error("estimation failed: {0}")]
    Estimation(String),

    /// A transfer-function denominator (or similar divisor) vanished.
    #[error("singularity: {0}")]
    Singular(String),

    /// A simulated state became non-finite.
    #[error("divergence at step {step}: {detail}")]
    Divergence { step: usize, detail: String },

    /// A solve had no admissible solution; the message lists candidates.
    #[error("no admissible solution: {0}")]
    Infeasible(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn parameter(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn non_finite(msg: impl Into<String>) -> Self {
        Error::NonFinite(msg.into())
    }
}

/// Checks one named scalar for NaN/infinity.
pub(crate) fn ensure_finite(name: &str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::non_finite(format!("{name} = {value}")))
    }
}
