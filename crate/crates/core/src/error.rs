use std::fmt;

/// Error type shared by every module in the crate.
#[derive(Debug)]
pub enum Error {
    /// Element count overflow or a zero extent.
    Size(String),
    /// Output extent below 1, incompatible matrix dimensions, branch shape mismatch.
    Geometry(String),
    /// An operator specification violates its invariants (divisibility, missing branch, ...).
    Spec(String),
    /// Two tensors that must agree in shape do not.
    ShapeMismatch(String),
    /// A replacement policy cannot be applied; names the offending layer.
    Policy(String),
    /// Model configuration is inconsistent (layer shapes do not chain).
    Config(String),
    /// Config-text parse failure with 1-based line number.
    Parse { line: usize, msg: String },
    Io(std::io::Error),
    /// Serialized blob is malformed or has the wrong precision tag.
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Size(m) => write!(f, "size error: {m}"),
            Error::Geometry(m) => write!(f, "geometry error: {m}"),
            Error::Spec(m) => write!(f, "spec error: {m}"),
            Error::ShapeMismatch(m) => write!(f, "shape mismatch: {m}"),
            Error::Policy(m) => write!(f, "policy error: {m}"),
            Error::Config(m) => write!(f, "config error: {m}"),
            Error::Parse { line, msg } => write!(f, "parse error at line {line}: {msg}"),
            Error::Io(e) => write!(f, "io error: {e}"),
            Error::Format(m) => write!(f, "format error: {m}"),
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
