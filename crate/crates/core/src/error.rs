use std::path::PathBuf;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("invalid link index {index} (chain has links 0..={max})")]
    InvalidLink { index: usize, max: usize },

    /// A description document failed validation. `field` names the offending key.
    #[error("invalid `{field}`: {message}")]
    Load { field: String, message: String },

    #[error("unsupported primitive pair: {0} / {1}")]
    UnsupportedPair(&'static str, &'static str),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("environment already terminated; reset before stepping")]
    EnvDone,

    #[error("reset failed: {0}")]
    Reset(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn load(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Load {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Dimension { expected, actual })
    }
}
