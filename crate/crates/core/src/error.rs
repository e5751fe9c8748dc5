use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("graph must have at least one row and one column (got {m} x {n})")]
    EmptyShape { m: usize, n: usize },

    #[error("entry ({row}, {col}) out of range for a {m} x {n} graph")]
    IndexOutOfRange { row: usize, col: usize, m: usize, n: usize },

    #[error("degenerate graph: zero density")]
    ZeroDensity,

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("zero rate with positive count at ({row}, {col})")]
    ZeroRateWithCount { row: usize, col: usize },

    #[error("enumeration too large: {terms} labelings exceeds the bound of {bound}")]
    EnumerationTooLarge { terms: f64, bound: f64 },

    #[error("rates not block-rank-one: block ({k}, {l}) varies by {deviation:e}")]
    NotBlockRankOne { k: usize, l: usize, deviation: f64 },

    #[error("cluster {0} has no members")]
    EmptyCluster(usize),

    #[error("row {0} has no admissible cluster")]
    NoAdmissibleCluster(usize),

    #[error("column {0} has no admissible cluster")]
    NoAdmissibleColumnCluster(usize),

    #[error("eigensolver did not converge after {iterations} iterations (residual {residual:e})")]
    EigenNotConverged { iterations: usize, residual: f64 },

    #[error("non-finite objective at iteration {iteration}: {value}")]
    NonFiniteObjective { iteration: usize, value: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("zero margin in contingency table ({0})")]
    ZeroMargin(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
