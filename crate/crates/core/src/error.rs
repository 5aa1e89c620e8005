use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("Hadamard order {0} is not a power of two >= 2")]
    NotPowerOfTwo(usize),
    #[error("Hadamard order {order} exceeds the configured cap {cap}")]
    OrderTooLarge { order: usize, cap: usize },
    #[error("all {order} codebook columns are assigned; label {label} cannot get a target code")]
    ColumnsExhausted { order: usize, label: u32 },
    #[error("label set is empty")]
    EmptyLabelSet,

    #[error("stream ended after {got} points, {needed} anchors required")]
    InsufficientData { needed: usize, got: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("kernel bandwidth must be positive, got {0}")]
    InvalidBandwidth(f64),

    #[error("hash length {bits} exceeds codebook order {order}")]
    BitLengthExceedsOrder { bits: usize, order: usize },
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("ensemble needs at least one round")]
    ZeroRounds,
    #[error("no training points left after anchor collection")]
    EmptyStream,
    #[error("batch is empty")]
    EmptyBatch,
    #[error("model has not been finalized")]
    ModelNotFinalized,

    #[error("index {index} out of bounds for {len} codes")]
    IndexOutOfBounds { index: usize, len: usize },
    #[error("database is empty")]
    EmptyDatabase,
    #[error("curve has no points")]
    EmptyCurve,

    #[error("bad magic number: expected {expected:#010x}, found {found:#010x}")]
    BadMagic { expected: u32, found: u32 },
    #[error("file is truncated: {0}")]
    TruncatedFile(String),
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("unsupported {what} version {version}")]
    UnsupportedVersion { what: &'static str, version: u32 },
    #[error("malformed input: {0}")]
    Malformed(String),

    #[error("split infeasible: {0}")]
    SplitInfeasible(String),
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub fn io(context: impl Into<String>, source: io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// Process exit code for the CLI, one per error class.
    pub fn exit_code(&self) -> i32 {
        use Error::*;
        match self {
            Config(_) => 2,
            Io { .. } => 3,
            BadMagic { .. }
            | TruncatedFile(_)
            | CountMismatch { .. }
            | UnsupportedVersion { .. }
            | Malformed(_) => 4,
            InsufficientData { .. } | SplitInfeasible(_) | EmptyStream | EmptyBatch => 5,
            DimensionMismatch { .. }
            | LengthMismatch { .. }
            | InvalidBandwidth(_)
            | ZeroRounds
            | ModelNotFinalized
            | BitLengthExceedsOrder { .. } => 6,
            NotPowerOfTwo(_) | OrderTooLarge { .. } | ColumnsExhausted { .. } | EmptyLabelSet => 7,
            IndexOutOfBounds { .. } | EmptyDatabase | EmptyCurve => 8,
        }
    }
}

impl From<io::Error> for Error {
    fn from(source: io::Error) -> Self {
        Error::io("i/o error", source)
    }
}
