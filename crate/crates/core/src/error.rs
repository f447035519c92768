use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed manifest record, line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },

    #[error("duplicate image id {id:?}, line {line}")]
    DuplicateRecord { id: String, line: usize },

    #[error("pose out of bounds, line {line}")]
    PoseOutOfBounds { line: usize },

    #[error(
        "mixed pose kinds in manifest: line {line} is {found}, earlier records are {expected}"
    )]
    MixedPoseKinds {
        line: usize,
        expected: &'static str,
        found: &'static str,
    },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: Vec<u8> },

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { expected: u16, found: u16 },

    #[error("truncated payload: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },

    #[error("{count} trailing bytes after payload")]
    TrailingBytes { count: usize },

    #[error("invalid feature set: {0}")]
    InvalidFeatures(String),

    #[error("invalid index file: {0}")]
    InvalidIndexFile(String),

    #[error("zero-norm vector for image {image_id:?}")]
    ZeroNorm { image_id: String },

    #[error("non-finite value in vector")]
    NonFinite,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("duplicate id {0:?}")]
    DuplicateId(String),

    #[error("aggregation method mismatch: index uses {index}, query uses {query}")]
    MethodMismatch { index: String, query: String },

    #[error("cannot build an index from zero descriptors")]
    EmptyIndex,

    #[error("k must be positive")]
    ZeroK,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty query set")]
    EmptyQuerySet,

    #[error("id {0:?} does not resolve to a pose")]
    UnresolvableId(String),

    #[error("cannot measure distance between {0} and {1} poses")]
    PoseKindMismatch(&'static str, &'static str),

    #[error("cannot sample {requested} items from {available}")]
    SampleTooLarge { requested: usize, available: usize },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}
