use alloc::string::String;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    /// SNR needs a positive mean; the offending mean is carried along.
    #[error("SNR undefined for non-positive mean {0}")]
    UndefinedSnr(f64),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

macro_rules! invalid {
    ($($arg:tt)*) => {
        $crate::Error::InvalidArgument(alloc::format!($($arg)*))
    };
}

macro_rules! degenerate {
    ($($arg:tt)*) => {
        $crate::Error::DegenerateInput(alloc::format!($($arg)*))
    };
}

pub(crate) use degenerate;
pub(crate) use invalid;
