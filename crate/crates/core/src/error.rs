use thiserror::Error;

/// Errors surfaced by model construction, estimation and interval routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("non-numeric value {value:?} in column `{column}` at row {row}")]
    NonNumeric {
        column: String,
        row: usize,
        value: String,
    },

    #[error("invalid dataset: {0}")]
    Validation(String),

    #[error("fixed-effects design is rank deficient (rank {rank} < {p} columns)")]
    RankDeficientDesign { rank: usize, p: usize },

    #[error("no residual degrees of freedom (n = {n}, p = {p})")]
    NoResidualSpace { n: usize, p: usize },

    #[error("eigenstructure has {0} distinct eigenvalue(s); at least 2 are required")]
    DegenerateSpectrum(usize),

    #[error("sum of squares S[{index}] = {value:e} is numerically zero")]
    DegenerateData { index: usize, value: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("value out of domain: {0}")]
    Domain(String),

    #[error("denominator is unbounded in the variance ratio (eigenvalue {0} is not positive)")]
    UnboundedDenominator(usize),

    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("alpha-cut is empty: plausibility at the centre is {max:.4} < alpha = {alpha}")]
    EmptyCut { alpha: f64, max: f64 },

    #[error("failed to bracket alpha-cut: {0}")]
    Bracket(String),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
