use std::path::PathBuf;

/// Errors produced by the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    Shape {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("domain error: {0}")]
    Domain(String),

    /// The drift vector is zero, so the closed-form optimum degenerates to
    /// `lambda = 0`. Fall back to [`crate::mgsm::lambda_lower_bound`].
    #[error("degenerate drift: optimal lambda is 0, outside (0, 1]; use lambda_lower_bound instead")]
    DegenerateDrift,

    #[error("degenerate evidence: likelihood is zero everywhere")]
    DegenerateEvidence,

    #[error("support violation at index {index}: p = {p} but q = 0")]
    Support { index: usize, p: f64 },

    #[error("label {label} out of range for vocabulary of size {size}")]
    LabelOutOfRange { label: usize, size: usize },

    #[error("frame key mismatch: prediction {pred:?} vs ground truth {gt:?}")]
    FrameKeyMismatch {
        pred: (String, u64),
        gt: (String, u64),
    },

    #[error("no ground-truth relation instances to evaluate")]
    EmptyDataset,

    #[error("empty lambda grid")]
    EmptyGrid,

    #[error("missing frequency entry for predicate {0:?}")]
    MissingFrequency(String),

    #[error("vocabulary mismatch: {0}")]
    Vocabulary(String),

    #[error("line {line}: {message}")]
    Data { line: usize, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::Shape {
            op,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
