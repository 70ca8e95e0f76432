use alloc::string::String;
use core::fmt;

/// Error type shared by every fallible operation in the core.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CoreError {
    /// Tensor or image shapes incompatible with the requested operation.
    /// The message names the offending dimensions.
    Shape(String),
    /// An argument outside its documented domain (negative learning rate,
    /// zero standard deviation, out-of-range label, ...).
    InvalidArg(String),
    /// An input collection that must be nonempty was empty.
    Empty(String),
}

impl fmt::Display for CoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreError::Shape(msg) => write!(f, "shape error: {msg}"),
            CoreError::InvalidArg(msg) => write!(f, "invalid argument: {msg}"),
            CoreError::Empty(msg) => write!(f, "empty input: {msg}"),
        }
    }
}

impl core::error::Error for CoreError {}

pub type Result<T> = core::result::Result<T, CoreError>;
