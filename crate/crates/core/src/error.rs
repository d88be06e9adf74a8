use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Tensor extents disagree with what an operation requires.
    Shape {
        op: &'static str,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    /// A value lies outside its permitted range (pixel outside the sensor,
    /// label past the class count, ...).
    Range(String),
    /// Events are not sorted by timestamp; `index` is the first offender.
    Unsorted {
        index: usize,
    },
    InvalidArgument(String),
    /// Network configuration that cannot be realised.
    Config(String),
    /// NaN or infinity in a loss or gradient.
    NonFinite(&'static str),
}

impl Error {
    pub(crate) fn shape(op: &'static str, expected: &[usize], found: &[usize]) -> Self {
        Error::Shape {
            op,
            expected: expected.to_vec(),
            found: found.to_vec(),
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape { op, expected, found } => write!(f, "{op}: expected shape {expected:?}, found {found:?}"),
            Error::Range(msg) => write!(f, "value out of range: {msg}"),
            Error::Unsorted { index } => {
                write!(f, "events not sorted by timestamp at index {index}")
            }
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::Config(msg) => write!(f, "invalid network configuration: {msg}"),
            Error::NonFinite(what) => write!(f, "non-finite value in {what}"),
        }
    }
}

impl core::error::Error for Error {}
