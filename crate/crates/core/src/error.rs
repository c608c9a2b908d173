use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("zero vector (norm {norm:e})")]
    ZeroVector { norm: f64 },

    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },

    #[error("non-finite value at component {index}")]
    NonFinite { index: usize },

    #[error("bad magic {found:?}, expected \"EMB1\"")]
    BadMagic { found: [u8; 4] },

    #[error("truncated file: expected {expected} bytes, found {found}")]
    TruncatedFile { expected: u64, found: u64 },

    #[error("{extra} unexpected trailing bytes after payload")]
    TrailingData { extra: u64 },

    #[error("embedding dimension must be at least 1")]
    DimZero,

    #[error("encoder is frozen")]
    FrozenEncoder,

    #[error("no negatives available for the contrastive loss")]
    EmptyNegatives,

    #[error("every negative was filtered out for sample {sample}")]
    AllFiltered { sample: usize },

    #[error("negative queue is empty")]
    EmptyQueue,

    #[error("ratio margin with zero denominator")]
    DivisionByZero,

    #[error("k={k} exceeds candidate count {candidates}")]
    KTooLarge { k: usize, candidates: usize },

    #[error("size mismatch: {left} sources vs {right} targets")]
    SizeMismatch { left: usize, right: usize },

    #[error("need at least 2 pairs to inject noise, got {count} selected")]
    TooFewPairs { count: usize },

    #[error("pair {index}: {source}")]
    AtPair {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid value for `{key}`: {reason}")]
    InvalidConfig { key: String, reason: String },

    #[error("line {line}: {reason}")]
    Format { line: usize, reason: String },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn at_pair(index: usize, err: Error) -> Error {
        Error::AtPair {
            index,
            source: Box::new(err),
        }
    }

    pub(crate) fn config(key: impl Into<String>, reason: impl Into<String>) -> Error {
        Error::InvalidConfig {
            key: key.into(),
            reason: reason.into(),
        }
    }

    /// Innermost error, skipping positional wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtPair { source, .. } => source.root(),
            other => other,
        }
    }
}
