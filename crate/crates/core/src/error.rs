use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("label {label} at pixel ({row}, {col}) is outside [0, {num_labels})")]
    Label {
        label: u32,
        row: usize,
        col: usize,
        num_labels: usize,
    },

    #[error("no segmentation map for image id `{0}`")]
    SegmentationLookup(String),

    #[error("backend `{backend}` failed: {message}")]
    Backend { backend: String, message: String },

    #[error("container corrupt: {0}")]
    Container(String),

    #[error("container truncated: {0}")]
    Truncated(String),

    #[error("unsupported container version {found} (expected {expected})")]
    Version { found: u8, expected: u8 },

    #[error("weights file corrupt: {0}")]
    Weights(String),

    #[error("weights mismatch: {0}")]
    WeightsMismatch(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("non-finite loss at epoch {epoch}, step {step}: {report}")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        report: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec: {0}")]
    Image(#[from] image::ImageError),

    #[error("tensor: {0}")]
    Tensor(#[from] candle_core::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn backend(backend: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Backend {
            backend: backend.into(),
            message: message.into(),
        }
    }
}
