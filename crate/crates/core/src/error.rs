use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path} line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("no tokens in corpus")]
    NoTokens,

    #[error("empty lexicon ({name}): {reason}")]
    EmptyLexicon { name: String, reason: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("uninformative word: gamma must be positive")]
    UninformativeWord,

    #[error("tau unidentifiable: {0}")]
    TauUnidentifiable(String),

    #[error("no imputed labels: every document ties under the seed rule")]
    NoImputedLabels,

    #[error("labels must contain both classes")]
    SingleClass,

    #[error("corpus has no gold labels")]
    MissingLabels,

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("solver diverged at outer iteration {iteration}: {detail}")]
    Divergence { iteration: usize, detail: String },
}

impl Error {
    /// Innermost error, skipping stage tags.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
