use crate::tensor::Shape;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CoreError {
    #[error("{op}: shape mismatch, expected {expected} but got {actual}")]
    ShapeMismatch { op: &'static str, expected: Shape, actual: Shape },

    #[error("{op}: {dim} mismatch, expected {expected} but got {actual}")]
    DimMismatch { op: &'static str, dim: &'static str, expected: usize, actual: usize },

    #[error("data length {actual} does not match shape length {expected}")]
    DataLength { expected: usize, actual: usize },

    #[error("{0}: empty input")]
    Empty(&'static str),

    #[error("{what} {value} out of range (limit {limit})")]
    OutOfRange { what: &'static str, value: usize, limit: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),

    #[error("tape already consumed by a previous backward pass")]
    TapeConsumed,

    #[error("backward requires a single-element loss, got shape {0}")]
    NonScalarLoss(Shape),

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
}
