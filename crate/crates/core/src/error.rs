use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum StanError {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("feature file {path}: {kind}")]
    Format { path: PathBuf, kind: FormatError },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("clip {clip}: {reason}")]
    Load { clip: String, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// The distinct ways an AVTF container can be malformed.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FormatError {
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}")]
    Version(u32),
    #[error("unsupported dtype {0}")]
    Dtype(u8),
    #[error("rank-0 tensors are not storable")]
    ScalarRank,
    #[error("zero extent in shape {0:?}")]
    ZeroExtent(Vec<usize>),
    #[error("extent product overflows")]
    ExtentOverflow,
    #[error("truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("{0} trailing bytes after checksum")]
    Trailing(usize),
}

impl StanError {
    pub fn dim(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        StanError::Dimension {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        StanError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = StanError> = std::result::Result<T, E>;
