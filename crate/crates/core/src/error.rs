use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("operator is not skew-adjoint (defect {defect:.3e})")]
    NotSkew { defect: f64 },
    #[error("operator is not positive (min form value {min:.3e})")]
    NotPositive { min: f64 },
    #[error("gram matrix is not symmetric positive definite")]
    BadGram,
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("point outside the effective domain")]
    Domain,
    #[error("operation not supported: {0}")]
    Unsupported(String),
    #[error("no element in the vector field (residual gap {gap:.3e})")]
    EmptyField { gap: f64 },
    #[error("inner minimisation failed: {0}")]
    Inner(String),
    #[error("singular linear system: {0}")]
    Singular(String),
    #[error("non-finite functional value at the initial path")]
    NonFiniteStart,
    #[error("line search failed on every restart")]
    LineSearch,
    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::Dimension { expected, found })
    }
}
