use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: malformed JSON: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: record {index} (line {line}): {message}")]
    Schema {
        path: PathBuf,
        index: usize,
        line: usize,
        message: String,
    },

    #[error("{path}: duplicate concept_id {concept_id:?} on lines {first_line} and {second_line}")]
    DuplicateConcept {
        path: PathBuf,
        concept_id: String,
        first_line: usize,
        second_line: usize,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid model config: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("sequence of length {len} exceeds the limit of {max} for {what}")]
    SequenceTooLong {
        what: &'static str,
        len: usize,
        max: usize,
    },

    #[error("corrupt {kind} file: {message}")]
    Corrupt { kind: &'static str, message: String },

    #[error("unsupported {kind} format version {found} (this build reads version {expected})")]
    Version {
        kind: &'static str,
        found: u32,
        expected: u32,
    },

    #[error("vocabulary hash mismatch: checkpoint has {checkpoint}, vocabulary has {vocab}")]
    VocabMismatch { checkpoint: String, vocab: String },

    #[error("non-finite loss {value} at epoch {epoch}, batch {batch}")]
    NonFinite {
        epoch: usize,
        batch: usize,
        value: f64,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
