use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised by the bound, rate and simulation routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid interval: {0}")]
    InvalidInterval(String),

    /// The closed-form coefficient bounds assume `mu^k e^-mu` is increasing
    /// over every intensity interval.
    #[error("monotonicity precondition violated: {0}")]
    Monotonicity(String),

    #[error("source admissibility conditions failed: {0}")]
    ConditionFailure(String),

    #[error("numerical domain error: {0}")]
    Domain(String),

    #[error("invalid scenario: {0}")]
    Scenario(String),

    /// Realized source coefficients escaped the declared bounds.
    #[error("coverage violation: {0}")]
    Coverage(String),
}
