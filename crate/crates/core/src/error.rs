use std::path::PathBuf;

/// Errors produced by the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid taxonomy: {0}")]
    Taxonomy(String),

    #[error("label value {value} at pixel ({row}, {col}) is outside the {num_classes}-class taxonomy")]
    LabelOutOfRange {
        value: u8,
        row: usize,
        col: usize,
        num_classes: usize,
    },

    #[error("invalid remap table: {0}")]
    Remap(String),

    #[error("pair `{id}`: image is {image_h}x{image_w} but labels are {label_h}x{label_w}")]
    ShapeMismatch {
        id: String,
        image_h: usize,
        image_w: usize,
        label_h: usize,
        label_w: usize,
    },

    #[error("pair `{id}`: {source}")]
    InvalidPair {
        id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },

    #[error("window exceeds image: {window} > {height}x{width}")]
    WindowExceedsImage { window: usize, height: usize, width: usize },

    #[error("{op}: size {size} exceeds raster dimensions {height}x{width}")]
    TooLarge {
        op: &'static str,
        size: usize,
        height: usize,
        width: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("pixel ({row}, {col}) is not covered by any window")]
    CoverageGap { row: usize, col: usize },

    #[error("batch size must be even, got {0}")]
    OddBatchSize(usize),

    #[error("sample stream `{0}` is empty")]
    EmptyStream(&'static str),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("loss: {0}")]
    Loss(String),

    #[error("unknown architecture `{0}`")]
    UnknownArchitecture(String),

    #[error("architecture `{0}`: adapter not registered")]
    AdapterNotRegistered(String),

    #[error("shape: {0}")]
    Shape(String),

    #[error("non-finite loss at step {step} (batch {batch_id})")]
    NonFiniteLoss { step: usize, batch_id: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error("evaluation: {0}")]
    Eval(String),

    #[error("duplicate row key ({source_dataset}, {method})")]
    DuplicateRowKey {
        source_dataset: String,
        method: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the error stems from invalid user input rather than a runtime failure.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::Io { .. } | Error::Image { .. } | Error::NonFiniteLoss { .. } | Error::NonFinite(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
