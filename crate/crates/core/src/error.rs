use std::path::PathBuf;

/// Errors produced anywhere in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid architecture: {0}")]
    InvalidArch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("inconsistent row width at row {row}: expected {expected} columns, got {got}")]
    InconsistentWidth { row: usize, expected: usize, got: usize },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("bad IDX magic number {found:#010x} (expected {expected:#010x})")]
    BadMagic { found: u32, expected: u32 },

    #[error("count mismatch: {images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("truncated file: {0}")]
    TruncatedFile(String),

    #[error("fraction {0} out of range (0, 1)")]
    FractionOutOfRange(f64),

    #[error("bottleneck violation: reduced last hidden width {reduced} < output width {outputs}")]
    BottleneckViolation { reduced: usize, outputs: usize },

    #[error("last hidden width equals output width ({0}); reduction is not applicable")]
    DegenerateFinalLayer(usize),

    #[error("reduced network is not smaller than the original (R = {reduced} >= O = {original})")]
    ReducedNotSmaller { original: u64, reduced: u64 },

    #[error("path count overflows a 64-bit counter")]
    PathCountOverflow,

    #[error("path budget exceeded: {required} paths > cap {cap}")]
    PathBudgetExceeded { required: u64, cap: u64 },

    #[error("pruning factor {0} out of range (0, 1]")]
    SigmaOutOfRange(f64),

    #[error("architecture mismatch between models")]
    ArchMismatch,

    #[error("paths do not share an origin")]
    OriginMismatch,

    #[error("empty history")]
    EmptyHistory,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
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
