use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("line {line}: timestamp does not fit the sampling grid: {msg}")]
    Grid { line: usize, msg: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("sequence of length {len} is shorter than depth {depth}")]
    Size { len: usize, depth: usize },

    #[error("no segment is long enough to build a matrix of depth {depth}")]
    EmptyMatrix { depth: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("regressors are not identifiable; deficient directions: {}", .directions.join("; "))]
    Identifiability { directions: Vec<String> },

    #[error("numerical fault: {0}")]
    Numerical(String),

    #[error("selection error: {0}")]
    Selection(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("fit error: {0}")]
    Fit(String),

    #[error("not applicable: {0}")]
    NotApplicable(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
