use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("invalid `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
}

impl ConfigError {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        ConfigError::Invalid { field, reason: reason.into() }
    }
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("starting allocation violates the constraints ({0}); run the feasibility search first")]
    InfeasibleStart(String),
    #[error("splitting factor of UE {ue} is {rho}, outside (0, 1]")]
    Domain { ue: usize, rho: f64 },
    #[error("allocation shape mismatch: {0}")]
    Shape(String),
}
