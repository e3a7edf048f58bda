use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error at {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("image error at {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("config error: {0}")]
    Config(String),
    /// A value outside its documented domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("box exceeds image: {0}")]
    BoxOutOfBounds(String),
    #[error("no records")]
    NoRecords,
    #[error("directory not found: {0}")]
    MissingDirectory(PathBuf),
    #[error("invalid trace: {0}")]
    InvalidTrace(String),
    #[error("staging capacity exceeded: {0}")]
    Capacity(String),
    #[error("unknown backend `{0}`")]
    UnknownBackend(String),
    #[error("write failed at {path} ({cleaned} partial outputs removed): {source}")]
    PartialWrite {
        path: PathBuf,
        cleaned: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
