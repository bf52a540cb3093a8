use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("empty catalog")]
    EmptyCatalog,

    #[error("duplicate hotel id `{0}`")]
    DuplicateHotel(String),

    #[error("duplicate session id `{0}`")]
    DuplicateSession(String),

    #[error("inconsistent {kind} feature length for hotel `{hotel}`: expected {expected}, found {found}")]
    FeatureLength {
        kind: &'static str,
        hotel: String,
        expected: usize,
        found: usize,
    },

    #[error("unknown hotel id `{0}`")]
    UnknownHotel(String),

    #[error("session `{0}` has no clicks")]
    EmptySession(String),

    #[error("mapping is not one-to-one: `{0}` appears twice")]
    MappingNotInjective(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("no source embedding for mapped hotel `{0}`")]
    MissingSourceEmbedding(String),

    #[error("non-finite loss at step {step} (target `{target}`, context `{context}`)")]
    NonFiniteLoss {
        step: u64,
        target: String,
        context: String,
    },

    #[error("query hotel `{0}` has no embedding")]
    MissingQuery(String),

    #[error("no evaluable events")]
    NoEvents,

    #[error("no common hotels between the two spaces")]
    NoCommonRows,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
