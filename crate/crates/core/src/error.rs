use thiserror::Error;

/// Error type shared by every subsystem of the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("trajectory coordinate out of range: {0}")]
    CoordOutOfRange(String),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {found}")]
    UnsupportedVersion { found: u16 },

    #[error("truncated file: expected {expected} bytes of payload, found {found}")]
    Truncated { expected: u64, found: u64 },

    #[error("graph execution error at node {node} ({op}): {message}")]
    GraphExec {
        node: usize,
        op: String,
        message: String,
    },

    #[error("backward called before forward")]
    BackwardBeforeForward,

    #[error("optimizer step aborted: {0}")]
    OptimizerAbort(String),

    #[error("training diverged at epoch {epoch} (non-finite loss); last good checkpoint retained")]
    Diverged { epoch: usize },

    #[error("degenerate metric input: {0}")]
    DegenerateMetric(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
