use std::path::{Path, PathBuf};

use tiltstream_core::Error as CoreError;

/// Everything the session layer can fail with. Each variant maps onto one
/// CLI exit code.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid config: {field}: {message}")]
    Config { field: String, message: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {field}: {message}", path.display())]
    Parse { path: PathBuf, field: String, message: String },
    #[error("{}: expected {expected} bytes, found {actual}", path.display())]
    SizeMismatch { path: PathBuf, expected: u64, actual: u64 },
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("event stream: {0}")]
    Wire(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn config(field: impl Into<String>, message: impl ToString) -> Self {
        Error::Config { field: field.into(), message: message.to_string() }
    }

    pub fn parse(path: &Path, field: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse { path: path.to_path_buf(), field: field.into(), message: message.to_string() }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io { path: path.to_path_buf(), source }
    }

    /// 2 invalid config, 3 I/O or file format, 4 degenerate data.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Config { .. } | Error::Core(CoreError::InvalidArgument(_)) => 2,
            Error::Io { .. } | Error::Parse { .. } | Error::SizeMismatch { .. } | Error::Wire(_) => 3,
            Error::Core(CoreError::DegenerateInput(_) | CoreError::UndefinedSnr(_)) => 4,
        }
    }
}

/// Attaches a path to `std::io` results.
pub(crate) trait IoContext<T> {
    fn at(self, path: &Path) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: &Path) -> Result<T> {
        self.map_err(|e| Error::io(path, e))
    }
}
