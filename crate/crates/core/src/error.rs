use alloc::string::String;
use core::fmt;

/// Failure modes shared by every module of the core crate.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Parameter or input dimensions disagree.
    Config(String),
    /// The caller passed an argument outside the operation's contract.
    Usage(String),
    /// A NaN or infinity appeared where a finite value is required.
    Numerical(String),
}

pub type Result<T> = core::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
            Error::Usage(msg) => write!(f, "usage error: {msg}"),
            Error::Numerical(msg) => write!(f, "numerical error: {msg}"),
        }
    }
}

impl core::error::Error for Error {}

macro_rules! usage {
    ($($arg:tt)*) => { $crate::error::Error::Usage(alloc::format!($($arg)*)) };
}
macro_rules! config {
    ($($arg:tt)*) => { $crate::error::Error::Config(alloc::format!($($arg)*)) };
}
macro_rules! numerical {
    ($($arg:tt)*) => { $crate::error::Error::Numerical(alloc::format!($($arg)*)) };
}
pub(crate) use {config, numerical, usage};
