use std::fmt;

/// Errors raised before a solve starts. Solver outcomes such as infeasibility
/// are reported through [`crate::Status`] instead.
#[derive(Debug, Clone, PartialEq)]
pub enum QpError {
    /// The problem data violates one of the structural invariants.
    InvalidProblem(String),
    /// Vectors handed to a routine do not match the problem dimensions.
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    /// The brute-force oracle refuses instances beyond its enumeration budget.
    InstanceTooLarge { size: usize, limit: usize },
}

impl fmt::Display for QpError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QpError::InvalidProblem(msg) => write!(f, "invalid QP: {msg}"),
            QpError::DimensionMismatch { what, expected, found } => {
                write!(f, "dimension mismatch for {what}: expected {expected}, found {found}")
            }
            QpError::InstanceTooLarge { size, limit } => write!(
                f,
                "instance too large for enumeration: {size} variables+constraints (limit {limit})"
            ),
        }
    }
}

impl std::error::Error for QpError {}
