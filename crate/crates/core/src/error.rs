use thiserror::Error;

/// Errors raised by the analysis and simulation routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("performance parameters must be distinct, got beta = {0} twice")]
    EqualBetas(f64),

    #[error("operation expects {expected} CDNs, market has {actual}")]
    WrongCdnCount { expected: usize, actual: usize },

    #[error("exact geometry supports at most 3 servers, layout has {0}")]
    UnsupportedMode(usize),

    #[error("state space has {size} states, above the cap of {cap}")]
    StateSpaceTooLarge { size: usize, cap: usize },

    #[error("policy has no action for state {state:?}: {reason}")]
    UndefinedAction { state: Vec<usize>, reason: String },

    #[error("routing error at t={time}: {reason}")]
    Routing { time: f64, reason: String },

    #[error("optimizer failure: {0}")]
    Solver(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
