use std::path::PathBuf;

/// Errors raised by every stage of the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A precondition on an argument or configuration value does not hold.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}, row {row}, column `{column}`: {message}")]
    Parse {
        path: PathBuf,
        row: usize,
        column: String,
        message: String,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("malformed {what}: {message}")]
    Format { what: &'static str, message: String },

    #[error("config: {0}")]
    Config(String),

    /// Non-finite loss or parameters during training.
    #[error("training diverged at epoch {epoch}: {message}")]
    Divergence { epoch: usize, message: String },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("sample id mismatch: {0}")]
    IdMismatch(String),

    /// Upstream artifact hashes do not line up.
    #[error("artifact chain mismatch: {0}")]
    ChainMismatch(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input (as opposed to runtime failures).
    pub fn is_validation(&self) -> bool {
        match self {
            Error::InvalidArgument(_) | Error::Config(_) => true,
            Error::Stage { source, .. } => source.is_validation(),
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
