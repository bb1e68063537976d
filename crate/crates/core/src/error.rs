use std::path::PathBuf;

use thiserror::Error;

/// Every failure the pipeline can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty exemplar set")]
    EmptyExemplars,

    #[error("vocab must have 8 words (got {0})")]
    VocabSize(usize),

    #[error("invalid vocab: {0}")]
    Vocab(String),

    #[error("label {label} out of range [0, {n_classes})")]
    LabelOutOfRange { label: i64, n_classes: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("stratification impossible: class {class} has {count} members, need at least {k}")]
    Stratification { class: usize, count: usize, k: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unknown channel '{0}'")]
    UnknownChannel(String),

    #[error("window [{start}, {end}) exceeds record of {len} samples")]
    OutOfBounds { start: i64, end: i64, len: usize },

    #[error("ICA did not converge after {iterations} iterations (last change {last_change:.3e})")]
    IcaNotConverged { iterations: usize, last_change: f64 },

    #[error("design matrix is rank deficient; dependent columns: {columns:?}")]
    RankDeficient { columns: Vec<usize> },

    #[error("non-finite values: {0}")]
    NonFinite(String),

    #[error("need at least two classes, found {0}")]
    SingleClass(usize),

    #[error("neighbor graph is disconnected ({components} components)")]
    DisconnectedGraph { components: usize },

    #[error("{modality} submodel: {source}")]
    Submodel {
        modality: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("checksum mismatch for {file}")]
    Checksum { file: String },

    #[error("missing file {0}")]
    MissingFile(PathBuf),

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("config: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn submodel(modality: &'static str, source: Error) -> Self {
        Error::Submodel {
            modality,
            source: Box::new(source),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
