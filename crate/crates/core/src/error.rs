use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("quantile level must lie in the open interval (0, 1), got {0}")]
    InvalidQuantile(f64),

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error(
        "lambda = {lambda} is outside (0, lambda_max = {lambda_max}]; \
         for lambda > lambda_max the coefficient vector is identically zero"
    )]
    LambdaOutOfRange { lambda: f64, lambda_max: f64 },

    #[error("lambda_max is zero: every feature column is orthogonal to the dual box, the problem is degenerate")]
    DegenerateLambdaMax,

    #[error("empty dual region: the active slab face lies {distance} from the origin, beyond the ball radius {rho}")]
    EmptyDualRegion { distance: f64, rho: f64 },

    #[error("weight {index} must be strictly positive, got {value}")]
    NonPositiveWeight { index: usize, value: f64 },

    #[error("numerical divergence at iteration {iter}")]
    NumericalDivergence { iter: usize },

    #[error("safety violation: screened features {indices:?} have nonzero coefficients")]
    SafetyViolation { indices: Vec<usize> },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
