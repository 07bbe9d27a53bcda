use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("index {index} out of range (limit {limit}): {context}")]
    OutOfRange {
        index: i64,
        limit: usize,
        context: String,
    },
    #[error("bad magic {0:?}, expected \"HAVA\"")]
    BadMagic([u8; 4]),
    #[error("unsupported container version {0}")]
    BadVersion(u32),
    #[error("unsupported dtype code {0}")]
    BadDtype(u8),
    #[error("duplicate entry name `{0}`")]
    DuplicateName(String),
    #[error("truncated container: {0}")]
    Truncated(String),
    #[error("missing entry `{0}`")]
    MissingEntry(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("wav: {0}")]
    Wav(String),
    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
