//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter value is outside its admissible set (non-finite, wrong
    /// sign, out of range).
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A function argument is outside the function's domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// An observation falls outside the support implied by the marginal
    /// parameters, in a context where that is an input error rather than a
    /// zero-density event.
    #[error("observation out of support: {0}")]
    OutOfSupport(String),

    /// Panel-wide support violation; lists every offending (site, year) cell.
    #[error("{} cell(s) out of marginal support: {}", cells.len(), format_cells(cells))]
    OutOfSupportCells { cells: Vec<(String, i64)> },

    /// A trend surface produced a non-positive GEV scale at a site.
    #[error("non-positive GEV scale {tau} at site {site}")]
    NonPositiveScale { site: String, tau: f64 },

    /// A covariance or correlation matrix failed Cholesky factorization even
    /// after the diagonal jitter ladder.
    #[error("matrix not positive definite (last jitter tried: {last_jitter:e})")]
    NotPositiveDefinite { last_jitter: f64 },

    /// A bivariate density evaluation produced a non-finite or non-positive
    /// value where the model guarantees positivity.
    #[error("non-finite density at (z1={z1}, z2={z2}): {detail}")]
    NonFiniteDensity { z1: f64, z2: f64, detail: String },

    /// Root finding failed because the target level is never attained.
    #[error("no root: {target} is never reached (supremum {supremum})")]
    NoRoot { target: String, supremum: f64 },

    /// The requested operation is not defined for this dependence family.
    #[error("operation not supported for this dependence family: {0}")]
    UnsupportedFamily(String),

    /// Too few complete observations to estimate the requested quantity.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// Numerical Hessian is singular or too ill-conditioned to invert.
    #[error("singular Hessian (reciprocal condition estimate {rcond:e})")]
    SingularHessian { rcond: f64 },

    /// Every optimizer start failed to produce a finite objective.
    #[error("all {starts} optimizer starts failed")]
    AllStartsFailed { starts: usize },

    /// A spatial query ball contains no grid cells.
    #[error("no grid cell centers inside ball (center ({x}, {y}), radius {radius})")]
    EmptyBall { x: f64, y: f64, radius: f64 },

    /// Structural mismatch between inputs (dimensions, site sets, lengths).
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Malformed input file; carries a line number when one is known.
    #[error("schema error{}: {message}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    Schema { line: Option<usize>, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

fn format_cells(cells: &[(String, i64)]) -> String {
    let shown: Vec<String> = cells
        .iter()
        .take(8)
        .map(|(site, year)| format!("{site}@{year}"))
        .collect();
    if cells.len() > 8 {
        format!("{}, ...", shown.join(", "))
    } else {
        shown.join(", ")
    }
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
