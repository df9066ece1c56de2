use thiserror::Error;

/// Crate-wide error type. Variants map one-to-one onto the failure modes of
/// the geometry, model, coder, codec, io and analysis layers so that callers
/// (CLI, FFI) can classify them without string matching.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty point cloud")]
    EmptyCloud,
    #[error("non-finite coordinate in point {0}")]
    InvalidPoint(usize),
    #[error("quantized coordinates span more than 2^31 voxels on one axis")]
    CoordinateOverflow,
    #[error("hierarchy mismatch: {0}")]
    HierarchyMismatch(String),
    #[error("occupancy code 0 is not expandable (a parent must have children)")]
    EmptyCode,
    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),
    #[error("invalid stage context: {0}")]
    InvalidContext(String),
    #[error("training diverged: loss is not finite")]
    DivergedTraining,
    #[error("corrupt stream: {0}")]
    CorruptStream(String),
    #[error("stream was encoded with a different model (digest mismatch)")]
    WrongModel,
    #[error("parse error: {0}")]
    ParseError(String),
    #[error("vertex element lacks float or double x, y, z properties")]
    MissingPositions,
    #[error("histogram bin mismatch: {0}")]
    BinMismatch(String),
    #[error("no neighbor counts to bin")]
    EmptyCounts,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
