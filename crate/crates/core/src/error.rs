use thiserror::Error;

pub type Result<T> = std::result::Result<T, WalkError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WalkError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shift by {ell} from reach {reach} would leave the lattice of capacity {capacity}")]
    CapacityExceeded {
        ell: usize,
        reach: usize,
        capacity: usize,
    },

    #[error("degenerate fit: {0}")]
    FitDegenerate(String),

    #[error("no peak found: {0}")]
    EmptyReport(String),

    #[error("refused: {0}")]
    Refused(String),

    #[error("internal error: {0}")]
    Internal(String),
}

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(WalkError::InvalidArgument(msg.into()))
}
