//! Crate-wide error type and the coarse classification front ends use to
//! pick process exit codes.

use std::path::PathBuf;

use thiserror::Error;

/// Coarse failure class. Front ends map these to exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// The caller passed an invalid option or configuration value.
    Usage,
    /// Input data is unreadable or violates a format contract.
    Data,
    /// A numeric breakdown or broken internal invariant.
    Internal,
}

/// Unified error type for the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{0} is empty")]
    Empty(String),

    #[error("dataset {path} contains no valid records")]
    EmptyDataset { path: PathBuf },

    #[error("class id {id} out of range for {num_classes} classes")]
    ClassIdOutOfRange { id: usize, num_classes: usize },

    #[error("malformed model file in section {section}: {detail}")]
    ModelFormat { section: String, detail: String },

    #[error("unsupported model file version {found} (supported: {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error("length mismatch for {what}: {left} vs {right}")]
    LengthMismatch {
        what: String,
        left: usize,
        right: usize,
    },

    #[error("label sets are disjoint; the models share no labels")]
    DisjointLabels,

    #[error("invalid probability distribution: {0}")]
    InvalidDistribution(String),

    #[error("metric reports cover different gold label sets")]
    GoldSetMismatch,

    #[error("{left} and {right} describe different document sets")]
    DocSetMismatch { left: PathBuf, right: PathBuf },

    #[error("non-finite {what} at step {step}")]
    NonFinite { what: &'static str, step: usize },

    #[error("malformed record in {path} at line {line}: {detail}")]
    Record {
        path: PathBuf,
        line: usize,
        detail: String,
    },
}

impl Error {
    /// Which exit-code class this failure belongs to.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) => ErrorKind::Usage,
            Error::Io { .. }
            | Error::Empty(_)
            | Error::EmptyDataset { .. }
            | Error::ModelFormat { .. }
            | Error::UnsupportedVersion { .. }
            | Error::LengthMismatch { .. }
            | Error::DisjointLabels
            | Error::InvalidDistribution(_)
            | Error::GoldSetMismatch
            | Error::DocSetMismatch { .. }
            | Error::Record { .. } => ErrorKind::Data,
            Error::ClassIdOutOfRange { .. } | Error::NonFinite { .. } => ErrorKind::Internal,
        }
    }
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kinds_partition_usage_data_internal() {
        assert_eq!(Error::Config("x".into()).kind(), ErrorKind::Usage);
        assert_eq!(
            Error::EmptyDataset {
                path: "d.jsonl".into()
            }
            .kind(),
            ErrorKind::Data
        );
        assert_eq!(
            Error::NonFinite {
                what: "loss",
                step: 3
            }
            .kind(),
            ErrorKind::Internal
        );
    }
}
