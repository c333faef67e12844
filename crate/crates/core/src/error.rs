use std::path::PathBuf;

use thiserror::Error;

use crate::labels::PseudoLabeledSet;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse error category, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Io,
    Parse,
    Validation,
    Config,
    Llm,
    Numeric,
}

impl ErrorCategory {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::Io => 2,
            ErrorCategory::Parse => 3,
            ErrorCategory::Validation => 4,
            ErrorCategory::Config => 5,
            ErrorCategory::Llm => 6,
            ErrorCategory::Numeric => 7,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error(transparent)]
    Embedding(#[from] EmbeddingError),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Llm(#[from] LlmError),

    #[error("LLM endpoint unreachable after retries ({completed} of {requested} answers obtained): {cause}")]
    EndpointUnreachable {
        completed: usize,
        requested: usize,
        cause: Box<LlmError>,
        partial: Box<PseudoLabeledSet>,
    },

    #[error("non-finite loss at epoch {epoch}: total={total} ce={ce} mec={mec}")]
    NonFiniteLoss {
        epoch: usize,
        total: f64,
        ce: f64,
        mec: f64,
    },

    #[error("zero-norm vector has no cosine similarity")]
    ZeroNorm,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Io { .. } => ErrorCategory::Io,
            Error::Parse { .. } => ErrorCategory::Parse,
            Error::Validation(_) | Error::Embedding(_) => ErrorCategory::Validation,
            Error::Config(_) => ErrorCategory::Config,
            Error::Llm(_) | Error::EndpointUnreachable { .. } => ErrorCategory::Llm,
            Error::NonFiniteLoss { .. } | Error::ZeroNorm => ErrorCategory::Numeric,
        }
    }
}

/// Rejections raised while reading an `XEMB` embedding file.
#[derive(Debug, Error, PartialEq)]
pub enum EmbeddingError {
    #[error("bad magic bytes {found:?}, expected \"XEMB\"")]
    BadMagic { found: Vec<u8> },
    #[error("unsupported embedding format version {0}")]
    UnsupportedVersion(u8),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("{0} unexpected trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("row-count mismatch: file has {found} rows, expected {expected}")]
    RowCount { expected: usize, found: usize },
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("row {0} has zero norm")]
    ZeroRow(usize),
    #[error("embedding dimension must be positive")]
    ZeroDim,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LlmError {
    #[error("could not parse an answer from model output {raw:?}")]
    Unparseable { raw: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("endpoint returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed response body: {0}")]
    MalformedResponse(String),
}

impl LlmError {
    /// Whether another attempt at the same request may succeed.
    pub fn is_retryable(&self) -> bool {
        match self {
            LlmError::Transport(_) => true,
            LlmError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}
