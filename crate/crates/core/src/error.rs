use thiserror::Error;

/// Errors shared across the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoherenceError {
    #[error("relation `{kind}` does not support arity {arity}")]
    UnsupportedArity { kind: &'static str, arity: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("enumeration bound exceeded: dimension {dim} > {limit}")]
    EnumerationBound { dim: usize, limit: usize },

    #[error("too many vertices for the hull oracle: {count} > {limit}")]
    TooManyVertices { count: usize, limit: usize },

    #[error("relation `{0}` has no closed-form projection")]
    NoClosedForm(&'static str),

    #[error("joint polytope is empty (coupling constraints are infeasible)")]
    InfeasibleJoint,

    #[error("composition is product-structured; no witness exists")]
    ProductStructured,

    #[error("internal inconsistency: {0}")]
    Internal(String),

    #[error("reference quote is not jointly coherent (violation {violation:.3e})")]
    ReferenceNotCoherent { violation: f64 },

    #[error("invalid ownership: {0}")]
    InvalidOwnership(String),

    #[error("invalid coupling constraint: {0}")]
    InvalidCoupling(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("insufficient data: need at least {needed}, have {have}")]
    InsufficientData { needed: usize, have: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),
}

pub type Result<T> = std::result::Result<T, CoherenceError>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(CoherenceError::DimensionMismatch { expected, got });
    }
    Ok(())
}
