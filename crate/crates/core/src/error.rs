use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type. Each variant maps to a stable process exit code
/// (see [`Error::exit_code`]), which the CLI documents in `--help`.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing column {column:?} in header [{header}]")]
    Schema { column: String, header: String },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("bad file format in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("sampling failed: {0}")]
    Sampling(String),

    #[error("training diverged: non-finite {component} at epoch {epoch}")]
    Divergence { component: String, epoch: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("degenerate embedding: zero-norm {side} row {row}")]
    DegenerateEmbedding { side: &'static str, row: usize },

    #[error("output directory {path} is locked by another run (remove {lock} if stale)")]
    OutputLocked { path: PathBuf, lock: PathBuf },
}

impl Error {
    /// Stable exit code for the CLI. 0 is success, 2 is reserved for
    /// argument-parsing errors, 1 for unexpected panics.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 3,
            Error::Schema { .. } => 4,
            Error::EmptyDataset(_) => 5,
            Error::Config(_) => 6,
            Error::Format { .. } => 7,
            Error::Sampling(_) => 8,
            Error::Divergence { .. } => 9,
            Error::OutputLocked { .. } => 10,
            Error::Contract(_) => 11,
            Error::DegenerateEmbedding { .. } => 12,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
