use thiserror::Error;

/// Errors produced by estimation, ingestion and correction routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{family}: outcome value {value} is outside the family support")]
    Domain { family: String, value: f64 },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("unbalanced panel: missing cell (unit {unit}, time {time})")]
    Unbalanced { unit: String, time: String },

    #[error("duplicate cell (unit {unit}, time {time})")]
    DuplicateCell { unit: String, time: String },

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("convergence failure: {0}")]
    Convergence(String),

    #[error("degenerate factor: {0}")]
    DegenerateFactor(String),

    #[error("regressors are colinear with the factor structure: {0}")]
    Noncolinearity(String),

    /// Binary outcomes are perfectly predicted along some direction of the
    /// effects, so the likelihood has no finite maximiser.
    /// `unit_side` tells whether the unit effect (rather than the period
    /// effect) is the one running off.
    #[error("separation: the index at (unit {unit}, period {period}) diverges, so no finite maximum exists")]
    Separation { unit: usize, period: usize, unit_side: bool },

    #[error("incidental Hessian has {count} near-zero eigenvalues (expected exactly one)")]
    RankDeficiency { count: usize },

    #[error("log-likelihood is not strictly concave at (unit {unit}, period {period})")]
    ConcavityViolation { unit: usize, period: usize },

    #[error("information matrix is not positive definite; eigenvalues {eigenvalues:?}")]
    SingularInformation { eigenvalues: Vec<f64> },

    #[error("degenerate unit {0}: zero curvature denominator")]
    DegenerateUnit(usize),

    #[error("degenerate period {0}: zero curvature denominator")]
    DegeneratePeriod(usize),

    #[error("subpanel fit `{label}` failed: {source}")]
    Subfit {
        label: String,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
