use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("unknown state label `{0}`")]
    UnknownState(String),

    #[error("unknown action label `{0}`")]
    UnknownAction(String),

    #[error("invalid transition model: {0}")]
    InvalidModel(String),

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("state `{0}` is terminal")]
    TerminalState(String),

    #[error("policy has no action distribution for state `{0}`")]
    MissingPolicyRow(String),

    #[error("model has no transition row for state `{state}`, action `{action}`")]
    MissingTransition { state: String, action: String },

    #[error("policy is improper: no terminal state is reachable from {}", .states.join(", "))]
    ImproperPolicy { states: Vec<String> },

    #[error("linear system for policy evaluation is singular")]
    SingularSystem,

    #[error("action `{action}` has zero probability in state `{state}`; log-gradient is singular")]
    SingularGradient { state: String, action: String },

    #[error("unknown environment `{name}`; valid names: {}", .valid.join(", "))]
    UnknownEnvironment { name: String, valid: Vec<String> },

    #[error("no state was visited in any episode")]
    EmptyEstimate,

    #[error("malformed json: {0}")]
    Json(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e.to_string())
    }
}
