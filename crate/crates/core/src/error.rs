use std::path::PathBuf;

use thiserror::Error;

/// Low-level reasons a persisted file can be rejected.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FormatError {
    #[error("bad magic bytes {found:?}, expected {expected:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported version {found}, expected {expected}")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("checksum mismatch: header says {expected:#018x}, payload hashes to {actual:#018x}")]
    ChecksumMismatch { expected: u64, actual: u64 },
    #[error("truncated at byte offset {offset}: needed {needed} more bytes")]
    Truncated { offset: u64, needed: u64 },
    #[error("invalid field at byte offset {offset}: {reason}")]
    InvalidField { offset: u64, reason: String },
    #[error("{extra} trailing bytes after byte offset {offset}")]
    TrailingBytes { offset: u64, extra: u64 },
}

impl FormatError {
    /// Stable numeric code per failure class, used in CLI diagnostics.
    pub fn code(&self) -> u8 {
        match self {
            FormatError::BadMagic { .. } => 10,
            FormatError::VersionMismatch { .. } => 11,
            FormatError::ChecksumMismatch { .. } => 12,
            FormatError::Truncated { .. } => 13,
            FormatError::InvalidField { .. } => 14,
            FormatError::TrailingBytes { .. } => 15,
        }
    }
}

#[derive(Debug, Error)]
pub enum AvseError {
    /// Input violates an operation's precondition.
    #[error("domain error: {0}")]
    Domain(String),
    #[error("format error in {}: {source} (code {})", path.display(), source.code())]
    Format {
        path: PathBuf,
        #[source]
        source: FormatError,
    },
    #[error("non-finite loss at step {step} (batch items {batch_items:?}); parameter norms {param_norms:?}")]
    NonFinite {
        step: u64,
        batch_items: Vec<usize>,
        param_norms: [f64; 4],
    },
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl AvseError {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        AvseError::Domain(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AvseError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 for domain/usage problems, 2 for malformed files.
    pub fn exit_code(&self) -> i32 {
        match self {
            AvseError::Format { .. } | AvseError::Json(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, AvseError>;
