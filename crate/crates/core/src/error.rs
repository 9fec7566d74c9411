use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = NialError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum NialError {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("label error: {0}")]
    Label(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("model build error: {0}")]
    Build(String),

    #[error("checkpoint format error: {0}")]
    CheckpointFormat(String),

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl NialError {
    /// Short machine-readable category, stable across releases.
    pub fn category(&self) -> &'static str {
        match self {
            NialError::Dimension(_) => "dimension",
            NialError::Label(_) => "label",
            NialError::Contract(_) => "contract",
            NialError::Build(_) => "build",
            NialError::CheckpointFormat(_) => "checkpoint-format",
            NialError::CheckpointVersion { .. } => "checkpoint-version",
            NialError::Parse { .. } => "parse",
            NialError::EmptyDataset(_) => "empty-dataset",
            NialError::Split(_) => "split",
            NialError::Divergence(_) => "divergence",
            NialError::Config(_) => "config",
            NialError::Io { .. } => "io",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        NialError::Io {
            path: path.into(),
            source,
        }
    }
}
