use thiserror::Error;

/// Errors produced anywhere in the simulation and optimization pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("index out of range: {what} = {index} (limit {limit})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("quadrature did not converge (achieved error estimate {achieved:.3e})")]
    QuadratureNonConvergence { achieved: f64 },

    #[error("matrix is not positive semi-definite: smallest eigenvalue {min_eigenvalue:.3e} below {threshold:.3e}")]
    NotPsd {
        min_eigenvalue: f64,
        threshold: f64,
    },

    #[error("matrix is numerically singular (condition estimate {condition:.3e})")]
    Singular { condition: f64 },

    #[error("trace {name} has imaginary residual {residual:.3e} relative to its magnitude")]
    ImaginaryResidual { name: &'static str, residual: f64 },

    #[error("zero denominator while computing {0}")]
    ZeroDenominator(&'static str),

    #[error("conic solver failed after {iterations} iterations (duality gap {gap:.3e})")]
    SolverFailure { iterations: usize, gap: f64 },

    #[error("bisection aborted at gamma in [{gamma_min}, {gamma_max}] (iteration {iteration}): {source}")]
    Bisection {
        gamma_min: f64,
        gamma_max: f64,
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("malformed {what}: {reason}")]
    Parse { what: &'static str, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        field: field.into(),
        reason: reason.into(),
    }
}
