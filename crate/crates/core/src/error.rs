use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the diagnostic toolkit.
#[derive(Debug, Error)]
pub enum MscError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic: expected \"MSCT\", found {0:?}")]
    BadMagic([u8; 4]),

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),

    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u8),

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error("payload size mismatch: dims imply {expected} elements, payload has {actual}")]
    PayloadSizeMismatch { expected: usize, actual: usize },

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("missing tensor \"{0}\" in cache")]
    MissingTensor(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("rank-deficient input: {0}")]
    RankDeficient(String),

    #[error("rows lie inside the subspace: {0}")]
    InsideSubspace(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, MscError>;

impl MscError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        MscError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than numerics.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            MscError::Numerical(_) | MscError::NonFiniteLoss { .. } | MscError::Degenerate(_)
        )
    }
}
