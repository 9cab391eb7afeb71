//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A scenario (or a generation spec for one) violates an invariant.
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    /// A line assignment is not a valid partition of the candidate stops.
    #[error("invalid assignment: {0}")]
    InvalidAssignment(String),

    /// An action is not admissible in the given state.
    #[error("inadmissible action: {0}")]
    InadmissibleAction(String),

    /// Dimension or hyperparameter mismatch.
    #[error("configuration error: {0}")]
    Config(String),

    /// Degenerate statistical input (empty sample, zero variance, ...).
    #[error("statistics error: {0}")]
    Stats(String),

    /// Malformed input file.
    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
