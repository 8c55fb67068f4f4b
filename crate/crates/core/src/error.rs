use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    /// Malformed input file content (bad field, missing column, ...).
    #[error("input format error: {0}")]
    Format(String),

    #[error("link {link} references unknown node {node}")]
    DanglingNode { link: i64, node: i64 },

    #[error("link {0} has non-positive length")]
    NonPositiveLength(i64),

    #[error("link {0} starts and ends at the same node")]
    SelfLoop(i64),

    #[error("duplicate link id {0}")]
    DuplicateLink(i64),

    #[error("duplicate node id {0}")]
    DuplicateNode(i64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("duplicate record for trajectory {0}")]
    DuplicateRecord(String),

    #[error("path is not connected in the directed graph: {0}")]
    DisconnectedPath(String),

    #[error("empty path")]
    EmptyPath,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("eigendecomposition failed: {0}")]
    Decomposition(String),

    #[error("records are not aligned: {0}")]
    Misaligned(String),

    #[error("trajectory {0} has no end probe")]
    Unfinished(String),
}
