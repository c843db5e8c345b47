use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input to {0}")]
    EmptyInput(&'static str),

    #[error("non-finite value at index {index} in {what}")]
    NonFinite { what: &'static str, index: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch in {what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("label sequence contains the blank id {0}")]
    BlankInTarget(usize),

    #[error("label id {id} out of range for output dimension {dim}")]
    LabelOutOfRange { id: usize, dim: usize },

    /// No alignment of the target fits in the available frames.
    #[error("target of length {target_len} is infeasible with {frames} frames (zero probability)")]
    InfeasibleTarget { frames: usize, target_len: usize },

    #[error("oracle enumeration refused: {0}")]
    OracleBound(String),

    #[error("sequence of length {0} is too short to down-sample")]
    TooShort(usize),

    #[error("forward tape is stale (tape generation {tape}, network generation {network})")]
    StaleTape { tape: u64, network: u64 },

    #[error("word {0:?} is not in the lexicon")]
    OutOfLexicon(String),

    #[error("unknown label {label:?} in {file}:{line}")]
    UnknownLabel {
        label: String,
        file: PathBuf,
        line: usize,
    },

    #[error("unknown word {0:?}")]
    UnknownWord(String),

    #[error("malformed {file}:{line}: {message}")]
    Malformed {
        file: PathBuf,
        line: usize,
        message: String,
    },

    #[error("truncated {file}: payload ends at byte offset {offset}, expected {expected} bytes")]
    Truncated {
        file: PathBuf,
        offset: u64,
        expected: u64,
    },

    #[error("bad header in {file}: {message}")]
    BadHeader { file: PathBuf, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("every training utterance was infeasible")]
    AllInfeasible,

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
