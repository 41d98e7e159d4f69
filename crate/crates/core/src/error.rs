//! Error type shared across the pipeline stages.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("split produced no eligible users (upl={upl}, min_test_items={min_test_items})")]
    EmptySplit { upl: usize, min_test_items: usize },

    #[error("{stage} training diverged at epoch {epoch}{detail}")]
    Divergence {
        stage: &'static str,
        epoch: usize,
        detail: String,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("basis mismatch: {0}")]
    BasisMismatch(String),

    #[error("entity index {index} out of range (n = {n})")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("candidate set is empty")]
    EmptyCandidates,

    #[error("ranked item {0} has no test rating")]
    MissingTestRating(usize),

    #[error("unknown user id `{0}`")]
    UnknownUser(String),

    #[error("missing artifact `{0}`; run the producing stage first")]
    MissingArtifact(PathBuf),

    #[error("config: {0}")]
    Config(String),

    #[error("malformed {what} file: {message}")]
    MalformedFile { what: &'static str, message: String },

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Wrap an error with the pipeline stage it occurred in.
    pub fn in_stage(stage: &'static str) -> impl FnOnce(Error) -> Error {
        move |source| Error::Stage {
            stage,
            source: Box::new(source),
        }
    }
}
