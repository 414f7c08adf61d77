use thiserror::Error;

/// Errors raised by the simulation and analysis layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid domain box: {0}")]
    InvalidBox(String),

    #[error("agent {index}: {reason}")]
    InvalidAgent { index: usize, reason: String },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("invalid sample path: {0}")]
    InvalidPath(String),

    #[error("point {point:?} lies outside the closed domain")]
    OutsideDomain { point: Vec<f64> },

    #[error("time grids do not match")]
    GridMismatch,

    #[error("non-finite state for agent {agent} at step {step}; the time step is too large for these parameters")]
    NonFiniteState { step: usize, agent: usize },

    #[error("at least {required} samples are required, got {got}")]
    TooFewSamples { required: usize, got: usize },

    #[error("mean squared error values must be positive, got {0}")]
    NonPositiveMse(f64),

    #[error("run {run_index}: {source}")]
    Run {
        run_index: u64,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// Strips run-index annotations added by the ensemble layer.
    pub fn root(&self) -> &Error {
        match self {
            Error::Run { source, .. } => source.root(),
            other => other,
        }
    }
}
