use std::io;
use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("missing required column `{0}`")]
    MissingColumn(String),

    #[error("invalid FER emotion code {0} (expected 0..=6)")]
    InvalidFerCode(i64),

    #[error("cannot stratify: label {label} has only {count} record(s)")]
    CannotStratify { label: String, count: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty vocabulary")]
    EmptyVocabulary,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("class with zero examples: {0}")]
    EmptyClass(String),

    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged {
        epoch: usize,
        reason: String,
        /// Per-epoch `(loss, val_accuracy)` rows recorded before divergence.
        history: Vec<(f64, f64)>,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("cascade error at {path}: {reason}")]
    Cascade { path: String, reason: String },

    #[error("image error: {0}")]
    Image(String),

    #[error("shape mismatch at {layer}: {reason}")]
    Shape { layer: String, reason: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("checksum mismatch (file truncated or corrupted)")]
    Checksum,

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad input data rather than program faults.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::Diverged { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
