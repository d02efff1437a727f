use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    /// Operand shapes do not line up.
    #[error("dimension error: {0}")]
    Dimension(String),
    /// An operation was configured with parameters it cannot honor.
    #[error("spec error: {0}")]
    Spec(String),
    /// A caller-side precondition was violated.
    #[error("contract error: {0}")]
    Contract(String),
    #[error("tape error: {0}")]
    Tape(String),
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("tensor format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

macro_rules! bail {
    ($kind:ident, $($arg:tt)*) => {
        return Err($crate::error::TensorError::$kind(format!($($arg)*)))
    };
}
pub(crate) use bail;
