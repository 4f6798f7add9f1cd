use std::fmt;
use std::io;
use std::path::{Path, PathBuf};

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Process exit codes, one per error family.
pub mod exit {
    pub const OK: i32 = 0;
    /// Invalid configuration, or a model and data that do not fit together.
    pub const CONFIG: i32 = 2;
    /// Unreadable or malformed files and input data.
    pub const IO: i32 = 3;
    /// Non-finite values or divergence during training.
    pub const NUMERIC: i32 = 4;
    /// A gradient check exceeded its tolerance.
    pub const GRADCHECK: i32 = 5;
}

/// Where a binary file stopped making sense.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FormatError {
    pub offset: u64,
    /// Zero-based record (utterance or tensor) being decoded, if any.
    pub record: Option<usize>,
    pub msg: String,
}

impl fmt::Display for FormatError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "at byte {}", self.offset)?;
        if let Some(r) = self.record {
            write!(f, " (record {r})")?;
        }
        write!(f, ": {}", self.msg)
    }
}

impl std::error::Error for FormatError {}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config error in `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },

    #[error("{}: format error {source}", path.display())]
    Format { path: PathBuf, source: FormatError },

    /// Bad input data, e.g. an unreadable WAV or a label file of the wrong length.
    #[error("{0}")]
    Input(String),

    #[error("gradient check failed for: {0}")]
    Gradcheck(String),

    #[error(transparent)]
    Core(#[from] densenet_core::Error),
}

impl Error {
    pub fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config { key: key.into(), msg: msg.into() }
    }

    pub fn io(path: impl AsRef<Path>, source: io::Error) -> Self {
        Error::Io { path: path.as_ref().to_path_buf(), source }
    }

    pub fn format(path: impl AsRef<Path>, source: FormatError) -> Self {
        Error::Format { path: path.as_ref().to_path_buf(), source }
    }

    pub fn exit_code(&self) -> i32 {
        use densenet_core::Error as E;
        match self {
            Error::Config { .. } => exit::CONFIG,
            Error::Io { .. } | Error::Format { .. } | Error::Input(_) => exit::IO,
            Error::Gradcheck(_) => exit::GRADCHECK,
            Error::Core(e) => match e {
                E::Config { .. } | E::Shape(_) | E::Label { .. } => exit::CONFIG,
                E::Input(_) | E::DegenerateBatch(_) => exit::IO,
                E::Numeric(_) | E::Divergence { .. } => exit::NUMERIC,
            },
        }
    }
}
