use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes are incompatible for the requested operation.
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("backward called on an empty tape")]
    EmptyTape,

    /// The adaptive pooling layer cannot map the given feature maps onto its output grid.
    #[error("unsupported dimensions: {0}")]
    UnsupportedDimensions(String),

    #[error("window too short to resample: {samples} samples (need at least 2)")]
    TooShort { samples: usize },

    #[error("invalid sensor selection: {0}")]
    InvalidSelection(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("stream {stream} has non-positive standard deviation {std}")]
    DegenerateStats { stream: usize, std: f64 },

    #[error("malformed file {path}: {detail}")]
    Format { path: String, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn config(detail: impl Into<String>) -> Self {
        Error::Config(detail.into())
    }
}
