//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An operation received tensors whose shapes do not fit together.
    #[error("{op}: dimension mismatch: expected {expected}, got {actual}")]
    Shape {
        op: &'static str,
        expected: String,
        actual: String,
    },

    /// An operation's hyperparameters describe an impossible geometry
    /// (non-integral output size, zero stride, odd pooling input, ...).
    #[error("{op}: invalid geometry: {detail}")]
    Geometry { op: &'static str, detail: String },

    /// Model validation failed at a specific layer.
    #[error("model invalid at layer {layer} ({kind}): expected {expected}, got {actual}")]
    Validation {
        layer: usize,
        kind: String,
        expected: String,
        actual: String,
    },

    /// Head surgery was requested on an incompatible model.
    #[error("head surgery rejected: {reason}")]
    Surgery { reason: String },

    /// An operation requires a different head kind than the model has.
    #[error("{op}: requires a {expected} head")]
    HeadKind { op: &'static str, expected: &'static str },

    /// A class label does not exist for this model.
    #[error("label {label} out of range for {classes} classes")]
    LabelRange { label: usize, classes: usize },

    /// A configuration value is out of its legal range.
    #[error("invalid configuration: {detail}")]
    Config { detail: String },

    /// AUC is undefined when only one class is present.
    #[error("auc undefined: scores contain a single class")]
    AucUndefined,

    /// Aggregation over an empty metric stream.
    #[error("cannot aggregate an empty metric stream")]
    EmptyStream,

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Diverged { epoch: usize },

    /// A non-finite value appeared where the pipeline requires finite data.
    #[error("non-finite value detected in {context}")]
    NonFinite { context: String },

    /// An activation cache does not belong to this model/input pair.
    #[error("activation cache does not match this model and input")]
    StaleCache,

    /// A file's contents are not a valid serialized artifact.
    #[error("{path}: {detail}")]
    Format { path: String, detail: String },

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

    pub fn format(path: &std::path::Path, detail: impl Into<String>) -> Self {
        Error::Format {
            path: path.display().to_string(),
            detail: detail.into(),
        }
    }
}
