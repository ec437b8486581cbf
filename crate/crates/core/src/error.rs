use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or parameter shapes do not line up.
    #[error("shape error: {0}")]
    Shape(String),

    /// An operation was called outside its documented domain.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Train/deployed state does not allow the requested transition.
    #[error("state error: {0}")]
    State(String),

    #[error("invalid config field `{field}`: {message}")]
    Config { field: String, message: String },

    /// Malformed user input (images, label files, box sets).
    #[error("input error: {0}")]
    Input(String),

    #[error("weight file has bad magic {found:?}, expected \"RCSW\"")]
    BadMagic { found: [u8; 4] },

    #[error("unsupported weight file version {found} (this build reads version {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error("weight manifest mismatch at node `{node}`: {detail}")]
    ManifestMismatch { node: String, detail: String },

    #[error("weight file truncated: {0}")]
    Truncated(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}
