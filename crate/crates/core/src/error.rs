use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("file not found: {}", .0.display())]
    NotFound(PathBuf),

    #[error("unsupported audio encoding in {}: {detail}", path.display())]
    UnsupportedEncoding { path: PathBuf, detail: String },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown stem label `{0}`")]
    UnknownLabel(String),

    #[error("malformed metadata in {}: {detail}", path.display())]
    Metadata { path: PathBuf, detail: String },

    #[error("embedding backend `{backend}` unavailable: {detail} (use the `mock` backend for offline work)")]
    BackendUnavailable { backend: String, detail: String },

    #[error("no cached embedding for {song}/{stem} under backend `{backend}`")]
    EmbeddingNotFound {
        song: String,
        stem: String,
        backend: String,
    },

    #[error("corrupt embedding store entry {key}: {detail}")]
    CorruptEntry { key: String, detail: String },

    #[error("checkpoint schema version {found} is not supported (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("non-finite loss at epoch {epoch}, step {step}: {detail}")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        detail: String,
    },

    #[error("training collapsed on stems {stems:?} at epoch {epoch}")]
    Collapse { epoch: usize, stems: Vec<String> },

    #[error("tensor error: {0}")]
    Tensor(#[from] candle_core::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable identifier, surfaced by the CLI on failure.
    pub fn code(&self) -> &'static str {
        match self {
            Error::NotFound(_) => "not_found",
            Error::UnsupportedEncoding { .. } => "unsupported_encoding",
            Error::Io { .. } => "io",
            Error::Shape(_) => "shape_mismatch",
            Error::Empty(_) => "empty_input",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Config(_) => "invalid_config",
            Error::UnknownLabel(_) => "unknown_label",
            Error::Metadata { .. } => "malformed_metadata",
            Error::BackendUnavailable { .. } => "backend_unavailable",
            Error::EmbeddingNotFound { .. } => "embedding_not_found",
            Error::CorruptEntry { .. } => "corrupt_store_entry",
            Error::SchemaVersion { .. } => "schema_version",
            Error::Checkpoint(_) => "checkpoint",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::Collapse { .. } => "collapse",
            Error::Tensor(_) => "tensor",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::NotFound(path)
        } else {
            Error::Io { path, source }
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
