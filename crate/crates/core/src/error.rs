use std::fmt;

/// Unified error type for the core library.
#[derive(Debug)]
pub enum Error {
    /// I/O failure on a named file.
    Io { path: String, source: std::io::Error },
    /// Malformed text in a checkpoint, weight, or parameter file.
    Parse { path: String, line: usize, msg: String },
    /// A caller-supplied value violates a documented precondition.
    InvalidInput(String),
    /// A non-finite value appeared; the message names the offending term.
    NonFinite(String),
    /// Trajectory left the finite range; `t` is the integration time reached.
    Blowup { t: f64 },
    /// An iterative procedure ran out of budget without meeting its tolerance.
    NoConvergence(String),
    /// A geometric query had no answer (no sign change, no basin change, ...).
    Geometry(String),
    /// A computed result failed its post-hoc verification check.
    Verification(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Io { path, source } => write!(f, "io error on {path}: {source}"),
            Error::Parse { path, line, msg } => write!(f, "parse error {path}:{line}: {msg}"),
            Error::InvalidInput(msg) => write!(f, "invalid input: {msg}"),
            Error::NonFinite(what) => write!(f, "non-finite value in {what}"),
            Error::Blowup { t } => write!(f, "trajectory blow-up at t={t}"),
            Error::NoConvergence(msg) => write!(f, "no convergence: {msg}"),
            Error::Geometry(msg) => write!(f, "geometric failure: {msg}"),
            Error::Verification(msg) => write!(f, "verification failure: {msg}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}

impl Error {
    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io { path: path.display().to_string(), source }
    }
}
