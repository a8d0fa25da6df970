use alloc::string::String;

pub type Result<T, E = PncError> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PncError {
    /// An observation sits at the cone apex, where no direction is defined.
    #[error("observation {column} is at the apex (size {size:e})")]
    Apex { column: usize, size: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch { context: &'static str, expected: usize, found: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Input to `flatten_to_sector` is not on the cone it is flattened with.
    #[error("point is not on the cone: angle to axis {angle} but opening {opening}")]
    NotOnCone { angle: f64, opening: f64 },

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{skipped} of {total} bootstrap replicates were degenerate")]
    TooManySkipped { skipped: usize, total: usize },
}

impl PncError {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        PncError::Domain(msg.into())
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        PncError::InvalidParameter(msg.into())
    }
}
