use std::fmt;

/// Library-wide error type.
#[derive(Debug)]
pub enum Error {
    /// Tensor shapes are inconsistent for the requested operation.
    Shape(String),
    /// An operation produced a NaN or infinity.
    NonFinite(String),
    /// A graph-level precondition failed (bad node id, non-scalar source,
    /// target not an ancestor, ...).
    Graph(String),
    /// Invalid argument outside the tensor-shape family.
    InvalidArg(String),
    /// Dataset generation or parsing failure.
    Data(String),
    /// Config file failure.
    Config(String),
    /// Training diverged (non-finite loss).
    Diverged(String),
    Io(std::io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(m) => write!(f, "shape mismatch: {m}"),
            Error::NonFinite(m) => write!(f, "non-finite value: {m}"),
            Error::Graph(m) => write!(f, "graph error: {m}"),
            Error::InvalidArg(m) => write!(f, "invalid argument: {m}"),
            Error::Data(m) => write!(f, "data error: {m}"),
            Error::Config(m) => write!(f, "config error: {m}"),
            Error::Diverged(m) => write!(f, "training diverged: {m}"),
            Error::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
