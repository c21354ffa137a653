use thiserror::Error;

/// Errors raised by the numerical routines of this crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error(
        "quadrature did not converge: estimate {estimate:e}, error estimate {error:e} after {intervals} intervals"
    )]
    QuadratureNonConvergence {
        estimate: f64,
        error: f64,
        intervals: usize,
    },

    #[error("divergent integral: {0}")]
    DivergentIntegral(String),

    #[error("recurrence outside its domain: {0}")]
    RecurrenceDomain(String),

    #[error("profile is singular at r = 0 (a = {a})")]
    SingularEvaluation { a: f64 },

    #[error("coordinate r = {r} outside [0, {max}]")]
    OutOfDomain { r: f64, max: f64 },

    #[error("Nehari projection undefined: numerator {numerator:e}, denominator {denominator:e} (below Hardy threshold or indefinite direction)")]
    NehariUndefined { numerator: f64, denominator: f64 },

    #[error("dimension condition n > 2 + 2/a violated: n = {n}, 2 + 2/a = {bound}")]
    DimensionBound { n: u32, bound: f64 },

    #[error("unsupported field configuration: {0}")]
    UnsupportedField(String),

    #[error("fit failed: {0}")]
    Fit(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
