use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: file not found", .0.display())]
    NotFound(PathBuf),

    #[error("{}: {msg}", path.display())]
    Decode { path: PathBuf, msg: String },

    #[error("{}: {msg}", path.display())]
    Encode { path: PathBuf, msg: String },

    #[error("{}: label value {value} at pixel ({x}, {y}) is outside 0..{num_classes} and is not VOID", path.display())]
    LabelOutOfRange {
        path: PathBuf,
        value: u8,
        x: usize,
        y: usize,
        num_classes: usize,
    },

    #[error("{}:{line}: {source}", path.display())]
    Manifest {
        path: PathBuf,
        line: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{}:{line}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("descriptor mismatch: {0}")]
    DescriptorMismatch(String),

    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("label {0} has no palette entry")]
    MissingPalette(u8),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::NotFound(path)
        } else {
            Error::Io { path, source }
        }
    }
}
