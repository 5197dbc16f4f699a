use thiserror::Error;

use crate::mdp::{StateId, ValidationReport};

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("malformed workflow spec: {0}")]
    Parse(String),
    #[error("invalid workflow spec:\n{0}")]
    Invalid(ValidationReport),
    #[error("state {0} is not part of the workflow")]
    UnknownState(StateId),
    #[error("{state} -> {action} is not a valid transition")]
    InvalidTransition { state: StateId, action: StateId },
    #[error("state {0} has no valid actions")]
    NoActions(StateId),
}
