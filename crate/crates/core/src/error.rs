use std::path::PathBuf;

/// Errors raised by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("ragged row at line {line}: expected {expected} cells, found {found}")]
    RaggedRow {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("table has no data rows")]
    EmptyTable,
    #[error("missing value in column `{column}` at line {line}")]
    MissingValue { column: String, line: usize },
    #[error("cannot parse `{value}` as a number in column `{column}` at line {line}")]
    ParseNumeric {
        column: String,
        line: usize,
        value: String,
    },
    #[error("category `{value}` in column `{column}` was not seen when fitting")]
    UnseenCategory { column: String, value: String },
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no convergence: {0}")]
    NonConvergence(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("infeasible constraints: {0}")]
    Infeasible(String),
    #[error("utility improvement is undefined: the synthetic correlation matrix already matches the real one")]
    UndefinedImprovement,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
