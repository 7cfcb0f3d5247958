use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: image codec error: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    /// A file was readable but its content broke the on-disk format.
    #[error("{path}: field `{field}`: {message}")]
    Format {
        path: PathBuf,
        field: String,
        message: String,
    },

    #[error("invalid scene: {}", .0.join("; "))]
    InvalidScene(Vec<String>),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("unknown generator `{0}`")]
    UnknownGenerator(String),

    #[error("generator `{generator}` failed: {message}")]
    Generator { generator: String, message: String },

    #[error("remote generator transport error: {0}")]
    Transport(String),

    #[error("wire protocol error: {0}")]
    Protocol(String),

    #[error("remote generator reported an error: {0}")]
    Remote(String),

    /// Propagation failed while editing the key frame at `frame`.
    #[error("editing key frame {frame} failed: {source}")]
    KeyFrame {
        frame: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("training diverged: non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(
        path: impl Into<PathBuf>,
        field: impl Into<String>,
        message: impl Into<String>,
    ) -> Self {
        Error::Format {
            path: path.into(),
            field: field.into(),
            message: message.into(),
        }
    }
}
