use thiserror::Error;

/// Dimension mismatch between two operands.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("shape mismatch in {what}: expected {expected}, found {found}")]
pub struct ShapeError {
    pub what: &'static str,
    pub expected: usize,
    pub found: usize,
}

impl ShapeError {
    pub fn new(what: &'static str, expected: usize, found: usize) -> Self {
        Self {
            what,
            expected,
            found,
        }
    }
}
