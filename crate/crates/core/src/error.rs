use thiserror::Error;

/// Errors raised by the core building blocks.
///
/// Contract violations (wrong dimensions, cycles where a forest is required,
/// singular systems) are reported here rather than panicking so that the
/// experiment harness can turn them into diagnostics.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum BcdError {
    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    Dimension {
        expected: usize,
        got: usize,
        context: &'static str,
    },
    #[error("invalid block: {0}")]
    InvalidBlock(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("matrix is not symmetric: |A[{row},{col}] - A[{col},{row}]| = {diff}")]
    NotSymmetric { row: usize, col: usize, diff: f64 },
    #[error("node {0} is already in the forest")]
    AlreadyInForest(usize),
    #[error("cycle detected in block subgraph at node {0}")]
    CycleDetected(usize),
    #[error("zero pivot at node {0}")]
    ZeroPivot(usize),
    #[error("matrix is singular or not positive definite ({0})")]
    Singular(&'static str),
    #[error("operation requires a composite term but the problem has none")]
    NoComposite,
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("Lipschitz estimate diverged after {0} doublings")]
    LipschitzDiverged(usize),
    #[error("malformed problem descriptor: {0}")]
    Descriptor(String),
}

pub type Result<T> = std::result::Result<T, BcdError>;
