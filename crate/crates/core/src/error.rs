use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A malformed record in an input file. `line` is 1-based and counts the header.
    #[error("{file}:{line}: field `{field}`: {message}")]
    Parse {
        file: String,
        line: usize,
        field: String,
        message: String,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("rank-deficient design: collinear columns [{}]", .columns.join(", "))]
    RankDeficient { columns: Vec<String> },

    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl Error {
    pub(crate) fn parse(
        file: impl Into<String>,
        line: usize,
        field: impl Into<String>,
        message: impl Into<String>,
    ) -> Self {
        Error::Parse {
            file: file.into(),
            line,
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidInput(message.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerical routines rather than of the inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::RankDeficient { .. } | Error::Numeric(_))
    }
}
