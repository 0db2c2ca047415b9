use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("unknown residue code '{0}'")]
    UnknownResidue(String),

    #[error("missing backbone atom {atom} in model {model}, residue {residue}")]
    MissingBackbone {
        model: usize,
        residue: usize,
        atom: String,
    },

    #[error("sequence mismatch: {0}")]
    SequenceMismatch(String),

    #[error("checksum mismatch: expected {expected}, found {found}")]
    Checksum { expected: String, found: String },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("sampler diverged at step {step}")]
    SamplerDivergence { step: usize },

    #[error("training diverged at step {step}: {detail}")]
    TrainingDivergence { step: usize, detail: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
