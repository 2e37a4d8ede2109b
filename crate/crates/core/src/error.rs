use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by every stage of the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    /// A weight file failed validation. `tensor` names the offending tensor
    /// when the failure is local to one.
    #[error("format error{}: {message}", tensor.as_ref().map(|t| format!(" in tensor `{t}`")).unwrap_or_default())]
    Format {
        tensor: Option<String>,
        message: String,
    },

    #[error("input error: {0}")]
    Input(String),

    #[error("length error: sequence of {len} tokens exceeds max_seq_len {max}")]
    Length { len: usize, max: usize },

    #[error("addressing error: {0}")]
    Addressing(String),

    #[error("budget error: {0}")]
    Budget(String),

    #[error("{}: {source}", path.display())]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn format(message: impl Into<String>) -> Self {
        Error::Format {
            tensor: None,
            message: message.into(),
        }
    }

    pub(crate) fn format_in(tensor: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            tensor: Some(tensor.into()),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
