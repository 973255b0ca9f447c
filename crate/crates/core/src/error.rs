use alloc::string::String;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Structurally invalid input: bad alphabet, non-stochastic rows, wrong lengths.
    #[error("validation error: {0}")]
    Validation(String),

    /// A request the caller is not allowed to make (e.g. word shorter than the order).
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// Input data that is well-formed but too short or otherwise unusable.
    #[error("input error: {0}")]
    Input(String),

    /// An iterative computation failed to converge or produced a bad residual.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Every observation was censored in both directions.
    #[error("indeterminate: {0}")]
    Indeterminate(String),
}

pub type Result<T> = core::result::Result<T, Error>;
