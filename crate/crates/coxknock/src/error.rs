use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("empty data: {0}")]
    EmptyData(String),

    #[error("degenerate response: {0}")]
    DegenerateResponse(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("knockoff generation failed on column {column} ({name}): {source}")]
    KnockoffColumn {
        column: usize,
        name: String,
        #[source]
        source: Box<Error>,
    },

    #[error("run {run} failed: {source}")]
    RunFailed {
        run: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),
}
