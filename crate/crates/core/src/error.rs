use thiserror::Error;

/// Error type shared by the whole pipeline.
///
/// The variants map onto the CLI exit codes: configuration problems exit
/// with 2, data/format problems with 3, numeric failures (NaN loss) with 4.
#[derive(Error, Debug)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("lookup error: {0}")]
    Lookup(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// I/O error annotated with what was being attempted (usually a path).
    pub fn io_context(context: impl std::fmt::Display, e: std::io::Error) -> Error {
        Error::Io(std::io::Error::new(e.kind(), format!("{context}: {e}")))
    }

    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Usage(_) | Error::Shape(_) | Error::Lookup(_) => 2,
            Error::Data(_) | Error::Format(_) | Error::Io(_) | Error::Json(_) => 3,
            Error::Numeric(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
