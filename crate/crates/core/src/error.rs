use std::path::PathBuf;

use crate::actors::WorkflowState;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed JSON in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("ingestion error: {0}")]
    Ingestion(String),

    #[error("schema validation error: {0}")]
    SchemaValidation(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error(transparent)]
    Backend(#[from] BackendError),

    #[error("config error: {0}")]
    Config(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    /// An actor failed. Carries the failing actor's name and the state it was
    /// handed, so callers can inspect how far the workflow got.
    #[error("actor `{actor}` failed: {source}")]
    Actor {
        actor: String,
        #[source]
        source: Box<Error>,
        state: Option<Box<WorkflowState>>,
    },

    #[error("binding error in `{field}`: {message}")]
    Binding { field: String, message: String },

    #[error("database error: {0}")]
    Database(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json { context: context.into(), source }
    }

    pub(crate) fn binding(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Binding { field: field.into(), message: message.into() }
    }

    /// Name of the actor that failed, if this is an actor error.
    pub fn actor_name(&self) -> Option<&str> {
        match self {
            Error::Actor { actor, .. } => Some(actor),
            _ => None,
        }
    }

    /// The error underneath any actor wrappers.
    pub fn root_cause(&self) -> &Error {
        match self {
            Error::Actor { source, .. } => source.root_cause(),
            other => other,
        }
    }
}

/// Failures from a chat backend.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    /// Transient failures persisted past the retry budget.
    #[error("retries exhausted after {attempts} attempts (last status {status:?}): {last}")]
    Exhausted { attempts: u32, status: Option<u16>, last: String },

    /// The endpoint answered with a status that is never retried.
    #[error("request rejected with HTTP {status}: {body}")]
    Rejected { status: u16, body: String },

    #[error("malformed response: {0}")]
    Protocol(String),

    /// A failure the scripted mock was told to produce.
    #[error("scripted failure: {0}")]
    Scripted(String),

    #[error("backend misconfigured: {0}")]
    Config(String),
}
