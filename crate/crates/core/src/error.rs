use std::path::PathBuf;

/// Errors produced by the re-identification pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("box ({x},{y},{w},{h}) exceeds image bounds {width}x{height}")]
    Bounds {
        x: u32,
        y: u32,
        w: u32,
        h: u32,
        width: u32,
        height: u32,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {actual} ({context})")]
    Dimension {
        expected: usize,
        actual: usize,
        context: &'static str,
    },

    #[error("non-finite value in {layer}")]
    NonFinite { layer: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported format version {found} (reader supports {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error("no pet found in image")]
    NoPetFound,

    #[error("corpus is empty: no images were accepted")]
    EmptyCorpus,

    #[error("detector error: {0}")]
    Detector(String),

    #[error("missing embedding for image `{0}`")]
    MissingEmbedding(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("fold {fold} failed: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("image decode/encode error: {0}")]
    Image(#[from] image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
