use thiserror::Error;

pub type Result<T> = std::result::Result<T, PbsError>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PbsError {
    /// Inputs that violate a documented precondition (shape, range, consistency).
    #[error("invalid argument: {0}")]
    Argument(String),
    /// The requested quantity does not exist at these inputs.
    #[error("domain error: {0}")]
    Domain(String),
    /// An iterative or finite-difference computation failed to produce a usable value.
    #[error("numeric error: {0}")]
    Numeric(String),
    /// The first-order local variance is not positive at this point.
    #[error("local variance {local_variance} is not positive (positivity margin {margin})")]
    NonPositiveLocalVariance { local_variance: f64, margin: f64 },
    /// A simulation stopped at its work budget before finishing.
    #[error("partial result: completed {completed} of {requested} sigma draws")]
    Partial { completed: usize, requested: usize },
}

pub(crate) fn argument(msg: impl Into<String>) -> PbsError {
    PbsError::Argument(msg.into())
}

pub(crate) fn domain(msg: impl Into<String>) -> PbsError {
    PbsError::Domain(msg.into())
}

pub(crate) fn ensure_finite(name: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(domain(format!("{name} is not finite ({v})")))
    }
}
