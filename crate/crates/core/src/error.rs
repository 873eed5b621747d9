use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = PieError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum PieError {
    #[error("input too long: {len} tokens exceeds the maximum of {max}")]
    InputTooLong { len: usize, max: usize },

    #[error("malformed edit sequence: {0}")]
    MalformedEdits(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("line count mismatch: {src_path} has {src} lines, {tgt_path} has {tgt}")]
    LineCountMismatch {
        src_path: PathBuf,
        tgt_path: PathBuf,
        src: usize,
        tgt: usize,
    },

    #[error("count mismatch: {left} predictions vs {right} references")]
    CountMismatch { left: usize, right: usize },

    #[error("edit not representable by the model's edit space: {0}")]
    VocabularyMismatch(String),

    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("numeric divergence: non-finite value in {0}")]
    Divergence(String),

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl PieError {
    /// Process exit status for the command-line tool: 1 for configuration
    /// problems, 3 for numeric divergence, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            PieError::Config(_) => 1,
            PieError::Divergence(_) => 3,
            _ => 2,
        }
    }
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("digest mismatch for {what}: checkpoint has {stored}, found {actual}")]
    DigestMismatch {
        what: &'static str,
        stored: String,
        actual: String,
    },

    #[error("checkpoint file is truncated or its footer is corrupt")]
    Truncated,

    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

impl PieError {
    pub(crate) fn file(path: impl Into<PathBuf>, source: io::Error) -> Self {
        PieError::File {
            path: path.into(),
            source,
        }
    }
}
