//! Error types shared across the crate.

use thiserror::Error;

/// Errors raised by tensor and graph operations.
#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: dimension error: {detail}")]
    Shape { op: String, detail: String },
    #[error("non-finite values detected in {block}")]
    NonFinite { block: String },
    #[error("{op}: invalid input: {detail}")]
    Input { op: String, detail: String },
}

/// Errors raised while loading or writing dataset containers.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed manifest {path}: {detail}")]
    MalformedManifest { path: String, detail: String },
    #[error("blob checksum mismatch for {path}: manifest {expected}, actual {actual}")]
    ChecksumMismatch { path: String, expected: String, actual: String },
    #[error("blob length mismatch for {path}: expected {expected} bytes, actual {actual} bytes")]
    BlobLength { path: String, expected: usize, actual: usize },
    #[error("record error: {0}")]
    Record(String),
}

/// Errors raised by the training and evaluation pipeline.
#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("non-finite loss at step {step}; first offending block: {block}")]
    NonFiniteLoss { step: usize, block: String },
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Errors raised by evaluation metrics.
#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("label {label} out of range 0..{classes}")]
    LabelRange { label: usize, classes: usize },
}
