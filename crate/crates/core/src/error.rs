use std::path::PathBuf;

use numcore::NumError;
use thiserror::Error;

/// Errors surfaced by every stage of the pipeline.
///
/// Each variant maps onto one process exit code (see [`Error::exit_code`]).
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or inconsistent input data.
    #[error("{0}")]
    Input(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    /// A JSON document violates its schema; `path` locates the offending value.
    #[error("{path}: {message}")]
    Schema { path: String, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    /// Non-finite values or a violated numerical invariant.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Num(#[from] NumError),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn input(msg: impl Into<String>) -> Self {
        Self::Input(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Self::Config(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Self::Numerical(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// 1 input error, 2 configuration error, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Input(_) | Self::Parse { .. } | Self::Schema { .. } | Self::Io { .. } => 1,
            Self::Config(_) => 2,
            Self::Numerical(_) => 3,
            Self::Num(e) => match e {
                NumError::Config(_) => 2,
                NumError::Io(_) | NumError::Checkpoint(_) => 1,
                _ => 3,
            },
        }
    }
}

pub(crate) fn read_to_string(path: impl AsRef<std::path::Path>) -> Result<String> {
    let path = path.as_ref();
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_file(path: impl AsRef<std::path::Path>, contents: impl AsRef<[u8]>) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}
