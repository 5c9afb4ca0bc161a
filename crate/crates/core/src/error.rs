use thiserror::Error;

/// Errors produced while building or running a scenario.
#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid communication graph: {0}")]
    InvalidGraph(String),

    #[error("invalid electrical network: {0}")]
    InvalidNetwork(String),

    #[error("network solve failed: {0}")]
    SingularNetwork(String),

    #[error("invalid scenario config: {0}")]
    InvalidConfig(String),

    #[error("equilibrium initialization did not converge: {0}")]
    EquilibriumFailed(String),

    #[error("non-finite value in {what} at t = {time} s")]
    NonFinite { time: f64, what: String },

    #[error("NaN control input passed to safety filter")]
    NanControl,

    #[error("malformed log: {0}")]
    MalformedLog(String),
}

pub type Result<T> = std::result::Result<T, SimError>;

impl SimError {
    /// True for errors that indicate a bad scenario description rather
    /// than a runtime/numerical failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            SimError::InvalidGraph(_)
                | SimError::InvalidNetwork(_)
                | SimError::InvalidConfig(_)
        )
    }
}
