use std::io;

/// Errors surfaced by every stage of the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Bytes on disk do not match the declared format.
    #[error("malformed input: {0}")]
    MalformedInput(String),

    /// Well-formed input whose values violate a domain invariant.
    #[error("data error: {0}")]
    Data(String),

    /// Feature-matrix column names that do not follow the schema.
    #[error("schema error: {0}")]
    Schema(String),

    /// Invalid configuration or arguments.
    #[error("config error: {0}")]
    Config(String),

    /// A statistic whose variance collapsed to zero.
    #[error("degenerate variance: {0}")]
    DegenerateVariance(String),

    #[error("io error: {0}")]
    Io(#[from] io::Error),
}

impl Error {
    /// Stable short code used as a machine-parsable prefix by the CLI.
    pub fn code(&self) -> &'static str {
        match self {
            Error::MalformedInput(_) => "E_MALFORMED",
            Error::Data(_) => "E_DATA",
            Error::Schema(_) => "E_SCHEMA",
            Error::Config(_) => "E_CONFIG",
            Error::DegenerateVariance(_) => "E_DEGENERATE",
            Error::Io(_) => "E_IO",
        }
    }

    /// Process exit status: 2 for configuration problems, 3 for data problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Io(_) => 1,
            _ => 3,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::MalformedInput(format!("json: {e}"))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
