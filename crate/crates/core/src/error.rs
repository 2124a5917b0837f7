use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::corpus::CorpusError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("configuration: {0}")]
    Config(String),
    /// Inconsistent inputs that are not a parse error of one file.
    #[error("{0}")]
    Data(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// True when a NaN/Inf guard tripped somewhere below.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Autodiff(AutodiffError::NonFinite(_)))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
