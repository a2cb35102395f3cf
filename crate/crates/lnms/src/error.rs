use std::io;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LnmsError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{}:{line}: {message}", path.display())]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{}: {reason}", path.display())]
    Format { path: PathBuf, reason: String },
    #[error("{}: field `{field}` is {found}, expected {expected}", path.display())]
    Mismatch {
        path: PathBuf,
        field: String,
        expected: String,
        found: String,
    },
    #[error("results mix config hashes {0:?}; pass --force to collate anyway")]
    MixedHashes(Vec<String>),
    #[error("{}: no result files found", .0.display())]
    NoResults(PathBuf),
    #[error(transparent)]
    Core(#[from] lnms_core::Error),
}

pub type Result<T, E = LnmsError> = std::result::Result<T, E>;

impl LnmsError {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        LnmsError::Io { path: path.into(), source }
    }

    /// 3 for numerical failures, 2 for everything caused by bad input.
    pub fn exit_code(&self) -> i32 {
        match self {
            LnmsError::Core(lnms_core::Error::NonFinite { .. }) => 3,
            _ => 2,
        }
    }
}
