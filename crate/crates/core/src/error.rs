use thiserror::Error;

/// Errors raised by the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A matrix that must be invertible is (numerically) singular.
    #[error("conditioning error: {0}")]
    Conditioning(String),

    /// The interpolation constraints cannot be met.
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// An iterative routine failed; `best` carries the best value reached.
    #[error("numerical error: {message} (best value {best})")]
    Numerical { message: String, best: f64 },

    /// The instance is too large for an exhaustive routine.
    #[error("refused: {0}")]
    Refused(String),

    /// Invalid configuration (unknown keys, wrong shapes, missing fields).
    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Io(_) => 1,
            _ => 3,
        }
    }

    /// Short machine-parsable tag.
    pub fn tag(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::Conditioning(_) => "conditioning",
            Error::Infeasible(_) => "infeasible",
            Error::Numerical { .. } => "numerical",
            Error::Refused(_) => "refused",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        if e.is_io() {
            Error::Io(std::io::Error::other(e.to_string()))
        } else {
            Error::Config(e.to_string())
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(std::io::Error::other(e.to_string()))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
