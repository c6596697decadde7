use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum FhtwError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate model: {0}")]
    DegenerateModel(String),

    #[error("degenerate edge {edge:?}: {reason}")]
    DegenerateEdge { edge: (usize, usize), reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed data in {context}: {reason}")]
    Data { context: String, reason: String },

    #[error("internal error: {0}")]
    Internal(String),
}

impl FhtwError {
    /// Process exit code: 2 usage, 3 data, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            FhtwError::InvalidInput(_) | FhtwError::Io { .. } => 2,
            FhtwError::Data { .. } => 3,
            FhtwError::DegenerateModel(_) | FhtwError::DegenerateEdge { .. } | FhtwError::Internal(_) => 4,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        FhtwError::InvalidInput(msg.into())
    }

    pub(crate) fn data(context: impl Into<String>, reason: impl Into<String>) -> Self {
        FhtwError::Data {
            context: context.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FhtwError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, FhtwError>;
