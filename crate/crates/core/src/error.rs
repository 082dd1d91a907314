use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse classification used by the command-line front end to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Numerical,
    Config,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("numerical failure: {message} (condition {condition:.3e})")]
    Numerical { message: String, condition: f64 },

    #[error("matrix is not positive semidefinite: {0}")]
    NotPsd(String),

    #[error("size guard: {0}")]
    SizeGuard(String),

    #[error("config: {0}")]
    Config(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn numerical(message: impl Into<String>, condition: f64) -> Self {
        Error::Numerical {
            message: message.into(),
            condition,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Numerical { .. } | Error::NotPsd(_) | Error::SizeGuard(_) => ErrorClass::Numerical,
            Error::InvalidArgument(_) => ErrorClass::Usage,
            Error::DegenerateGeometry(_)
            | Error::InvalidScenario(_)
            | Error::Config(_)
            | Error::Json(_)
            | Error::Io(_) => ErrorClass::Config,
        }
    }
}
