use thiserror::Error;

/// Errors produced by the calibration toolkit.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("insufficient data: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("degenerate motion: {0}")]
    DegenerateMotion(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("no real root for the dual-quaternion constraint quadratic (inconsistent data)")]
    NoRealRoot,

    #[error("point at or behind the camera plane (z = {0})")]
    BehindCamera(f64),

    #[error("non-positive depth {0}")]
    InvalidDepth(f64),

    #[error("degenerate 6D rotation encoding: columns are (nearly) parallel or zero")]
    DegenerateEncoding,

    #[error("rank-deficient point configuration: {0}")]
    RankDeficient(String),

    #[error("no consensus: best inlier count {best} < required {required}")]
    NoConsensus { best: usize, required: usize },

    #[error("no correspondences within {0} m")]
    EmptyCorrespondence(f64),

    #[error("dimension mismatch: expected {expected:?}, got {got:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
}

impl Error {
    /// True for failures caused by the numbers (degenerate data, solver breakdown)
    /// rather than by malformed input.
    pub fn is_numerical(&self) -> bool {
        !matches!(
            self,
            Error::InvalidInput(_) | Error::DimensionMismatch { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
