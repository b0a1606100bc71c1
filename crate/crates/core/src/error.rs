//! Error type shared by all modules.

use thiserror::Error;

/// Errors produced by geometry evaluation, quadrature, searches, and I/O.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter is outside the mathematical domain of an operation
    /// (nonpositive scale, empty system, dimension mismatch, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// The chart is degenerate at the requested point: the induced metric is
    /// numerically rank-deficient (condition number above 1e12).
    #[error("degenerate chart: {0}")]
    DegenerateChart(String),

    /// `G + C` is singular at a point where the tube integrand needs its
    /// inverse.
    #[error("singular geometry: {0}")]
    SingularGeometry(String),

    /// Laplace approximation at a maximizer whose Hessian correction is not
    /// positive definite in the transverse directions.
    #[error("degenerate maximum: {0}")]
    DegenerateMaximum(String),

    /// A quadrature or extrapolation failed its convergence check.
    #[error("accuracy failure: {0}")]
    Accuracy(String),

    /// A documented precondition was violated (for example evaluating an
    /// exact-band expansion below the critical threshold).
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Malformed input: config files, CSV/JSON system descriptions,
    /// expression syntax.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}
