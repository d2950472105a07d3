use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("response {value} at row {row} is outside the domain of the {model} model")]
    Domain {
        model: &'static str,
        row: usize,
        value: f64,
    },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("{0} is not supported for the probit model (first derivative is unbounded)")]
    UnsupportedModel(&'static str),

    #[error(
        "remainder bound violated at iteration {iteration}, index {index}: |delta| = {delta:e} > c*M = {bound:e}"
    )]
    BoundViolation {
        iteration: usize,
        index: usize,
        delta: f64,
        bound: f64,
    },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("optimizer diverged after {steps} steps (|theta| = {norm:e})")]
    Diverged { steps: usize, norm: f64 },

    #[error(
        "optimizer did not reach gradient norm {tolerance:e} in {steps} steps (last {last:e})"
    )]
    NotConverged {
        steps: usize,
        tolerance: f64,
        last: f64,
    },

    #[error("matrix is not positive definite even after jitter {jitter:e}")]
    NotPositiveDefinite { jitter: f64 },

    #[error("cache file: {0}")]
    Sidecar(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Attach the iteration number to a bound violation raised deep inside a step.
    pub(crate) fn at_iteration(self, iter: usize) -> Self {
        match self {
            Error::BoundViolation {
                index,
                delta,
                bound,
                ..
            } => Error::BoundViolation {
                iteration: iter,
                index,
                delta,
                bound,
            },
            other => other,
        }
    }

    pub fn is_bound_violation(&self) -> bool {
        matches!(self, Error::BoundViolation { .. })
    }
}
