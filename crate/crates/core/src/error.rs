use std::path::PathBuf;

use chrono::NaiveDate;
use thiserror::Error;

/// Broad class of a failure; the CLI maps each to its own exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Schema,
    Data,
    Numeric,
    Compatibility,
    Usage,
    Io,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Schema => 10,
            ErrorClass::Data => 11,
            ErrorClass::Numeric => 12,
            ErrorClass::Compatibility => 13,
            ErrorClass::Usage => 14,
            ErrorClass::Io => 15,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("line {line}: {message}")]
    Row { line: u64, message: String },

    #[error("line {line}: date {date} does not follow the previous row's date")]
    Ordering { line: u64, date: NaiveDate },

    #[error("line {line}: duplicate article ({date}, {article_id})")]
    Duplicate {
        line: u64,
        date: NaiveDate,
        article_id: String,
    },

    #[error("insufficient data: need {needed}, got {got} ({context})")]
    InsufficientData {
        needed: usize,
        got: usize,
        context: &'static str,
    },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Divergence { epoch: usize },

    #[error("missing predictions for {} date(s): {}", .0.len(), join_dates(.0))]
    Coverage(Vec<NaiveDate>),

    #[error("compatibility error: {0}")]
    Compatibility(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("{}: {source}", .path.display())]
    File {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn join_dates(dates: &[NaiveDate]) -> String {
    dates
        .iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Schema(_) | Error::Row { .. } | Error::Json(_) => ErrorClass::Schema,
            Error::Ordering { .. }
            | Error::Duplicate { .. }
            | Error::InsufficientData { .. }
            | Error::EmptyDataset(_)
            | Error::Validation(_)
            | Error::Domain(_)
            | Error::Coverage(_) => ErrorClass::Data,
            Error::Numeric(_) | Error::Divergence { .. } => ErrorClass::Numeric,
            Error::Compatibility(_) => ErrorClass::Compatibility,
            Error::Precondition(_) | Error::Shape(_) | Error::Usage(_) => ErrorClass::Usage,
            Error::Io(_) => ErrorClass::Io,
            Error::File { source, .. } => source.class(),
        }
    }

    /// Attaches the offending file to an error.
    pub fn in_file(self, path: impl Into<PathBuf>) -> Error {
        Error::File {
            path: path.into(),
            source: Box::new(self),
        }
    }

    /// Strips file context, returning the innermost error.
    pub fn root(&self) -> &Error {
        match self {
            Error::File { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
