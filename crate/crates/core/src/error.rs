use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    // tensor files
    #[error("not an ATNB file (magic {found:?})")]
    MagicMismatch { found: [u8; 4] },
    #[error("unsupported ATNB version {0}")]
    UnsupportedVersion(u16),
    #[error("truncated file: {0}")]
    TruncatedFile(String),
    #[error("payload length {found} bytes disagrees with declared shape ({expected} bytes)")]
    PayloadLength { expected: u64, found: u64 },
    #[error("row (layer {layer}, head {head}, query {query}) sums to {sum}, not 1")]
    RowNotStochastic {
        layer: usize,
        head: usize,
        query: usize,
        sum: f64,
    },
    #[error("weight {value} at (layer {layer}, head {head}, {query}, {key}) outside [0, 1]")]
    WeightOutOfRange {
        layer: usize,
        head: usize,
        query: usize,
        key: usize,
        value: f32,
    },
    #[error("token count {0} exceeds the 1024 cap")]
    DimensionOverflow(usize),
    #[error("invalid tensor dimensions: {0}")]
    InvalidDimensions(String),
    #[error("invalid token text: {0}")]
    InvalidToken(String),

    // manifest
    #[error("parse error: {0}")]
    Parse(String),
    #[error("duplicate record id {0:?}")]
    DuplicateId(String),
    #[error("unknown category {0:?}")]
    UnknownCategory(String),
    #[error("record {id:?}: tensor file {path} does not exist")]
    DanglingTensorPath { id: String, path: PathBuf },
    #[error("record {id:?}: label {label} conflicts with category {category}")]
    LabelCategoryConflict {
        id: String,
        label: u8,
        category: String,
    },
    #[error("record {id:?}: {source}")]
    Record {
        id: String,
        #[source]
        source: Box<Error>,
    },

    // graphs and features
    #[error("threshold {0} outside [0, 1]")]
    InvalidThreshold(f64),
    #[error("tensor shapes differ: {0}")]
    MixedTensorShapes(String),
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("feature header mismatch: {0}")]
    HeaderMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    // models
    #[error("invalid number of principal components {requested} (max {max})")]
    InvalidNumPc { requested: usize, max: usize },
    #[error("training labels contain a single class")]
    SingleClass,
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("feature registry does not match the model: {0}")]
    FeatureMismatch(String),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("feature registries differ: {0}")]
    RegistryMismatch(String),
    #[error("model file: {0}")]
    Model(String),

    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error: 3 for broken internal invariants,
    /// 2 for everything caused by inputs.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Invariant(_) | Error::NonFinite(_) => 3,
            Error::Record { source, .. } => source.exit_code(),
            _ => 2,
        }
    }
}
