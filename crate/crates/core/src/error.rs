use thiserror::Error;

/// Errors raised by the model evaluators, the particle engine and the I/O layer.
#[derive(Debug, Error)]
pub enum LeibensonError {
    /// A parameter or argument lies outside the domain of a formula.
    #[error("domain error: {0}")]
    Domain(String),

    /// The (p, q) pair is outside the slow-diffusion regime, or a theorem
    /// gate required by an operation is not satisfied.
    #[error("regime error: {predicate} violated")]
    Regime { predicate: String },

    /// A root solve or iterative procedure failed to converge.
    #[error("convergence error: {0}")]
    Convergence(String),

    /// The gradient of the density is unbounded on the free boundary.
    #[error("point lies on the free boundary |x| = R(t) where the gradient is unbounded")]
    Boundary,

    /// Coefficients are unbounded at the source point (p < 2).
    #[error("singular point: {0}")]
    Singularity(String),

    #[error("argument out of range: {0}")]
    Range(String),

    /// A particle left the admissible region, usually because dt is too large.
    #[error("numerical blow-up at t = {time}: {detail}")]
    NumericalBlowup { time: f64, detail: String },

    #[error("ensemble is empty")]
    EmptyEnsemble,

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, LeibensonError>;
