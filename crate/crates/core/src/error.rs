use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },

    #[error("cannot read {}: {source}", path.display())]
    File { path: PathBuf, source: std::io::Error },

    #[error("corpus {0} contains no records")]
    EmptyCorpus(PathBuf),

    #[error("duplicate snippet ids: {}", .0.join(", "))]
    DuplicateIds(Vec<String>),

    #[error("not enough {what}: required {required}, available {available}")]
    Size { what: String, required: usize, available: usize },

    #[error("contamination: {0}")]
    Contamination(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("access violation: {0}")]
    Access(String),

    #[error("training diverged at step {step}: loss {loss}")]
    Diverged { step: usize, loss: f32 },

    #[error("mode mismatch: {0}")]
    Mode(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("metric undefined: {0}")]
    Metric(String),

    #[error("degenerate fit: {0}")]
    Degenerate(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage { stage, source: Box::new(self) }
    }

    /// Innermost error, skipping any stage wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}
