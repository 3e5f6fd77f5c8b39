use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("non-finite value {value} at index (t={t}, x={x}, xi={xi})")]
    NonFinite { t: usize, x: usize, xi: usize, value: f64 },

    #[error("grid too small for stencil: need at least {needed} nodes per axis, got {got}")]
    StencilTooSmall { needed: usize, got: usize },

    #[error("field shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("bad magic number in field file")]
    BadMagic,

    #[error("unsupported field file: {0}")]
    Unsupported(String),

    #[error("truncated field file: expected {expected} payload bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("weight must be strictly positive, found {value} at (t={t}, node={node})")]
    NonPositiveWeight { t: usize, node: usize, value: f64 },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("ambiguous eigenvalue clustering: {0}")]
    AmbiguousCluster(String),

    #[error("not principal type on patch: {0}")]
    NotPrincipalType(String),

    #[error("inequality violated: {0}")]
    Violation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
