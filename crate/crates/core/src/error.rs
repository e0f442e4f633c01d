//! Error type shared by every module of the crate.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input that violates a documented precondition (bad schema, bad config, bad argument).
    #[error("validation error: {0}")]
    Validation(String),

    /// A CSV or schema file that cannot be read as declared.
    #[error("load error at {location}: {message}")]
    Load { location: String, message: String },

    /// A numerical routine failed (non-finite loss, singular system, ...).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A run artifact expected on disk is absent.
    #[error("missing artifact(s): {}", .0.join(", "))]
    MissingArtifact(Vec<String>),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Error raised inside a pipeline stage, tagged with the stage name.
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub fn load(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Load {
            location: location.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn in_stage(self, stage: &str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage: stage.to_string(),
                source: Box::new(e),
            },
        }
    }

    /// Prefix the message with `context` (e.g. the CV cell that failed),
    /// keeping the error kind.
    pub fn context(self, context: &str) -> Self {
        match self {
            Error::Validation(m) => Error::Validation(format!("{context}: {m}")),
            Error::Numerical(m) => Error::Numerical(format!("{context}: {m}")),
            Error::Load { location, message } => Error::Load {
                location,
                message: format!("{context}: {message}"),
            },
            e => e,
        }
    }

    /// Process exit code for the command-line front end:
    /// 1 validation, 2 numerical failure, 3 missing artifact.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_) | Error::Load { .. } | Error::Io { .. } => 1,
            Error::Numerical(_) => 2,
            Error::MissingArtifact(_) => 3,
            Error::Stage { source, .. } => source.exit_code(),
        }
    }
}
