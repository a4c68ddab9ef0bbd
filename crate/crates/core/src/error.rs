use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("beta = 8 (octonions) is formula-only: concrete matrix operations are unavailable")]
    FormulaOnlyAlgebra,
    #[error("invalid beta {0}: expected one of 1, 2, 4, 8")]
    InvalidBeta(u32),
    #[error("matrix is not Hermitian (max deviation {deviation:e})")]
    NonHermitian { deviation: f64 },
    #[error("matrix is not positive definite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: String, got: String },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("leading principal minor of order {order} is not positive ({value:e})")]
    SingularMinor { order: usize, value: f64 },
    #[error("partition degree {degree} exceeds table degree {max}")]
    DegreeExceeded { degree: usize, max: usize },
    #[error("budget exceeded: {0}")]
    BudgetExceeded(String),
    #[error("lower parameter {value} hits the excluded lattice (row {row})")]
    PoleParameter { value: f64, row: usize },
    #[error("rejection sampler stalled: acceptance rate {rate:e} after {proposals} proposals")]
    RejectionStall { rate: f64, proposals: u64 },
    #[error("quadrature failed: achieved error {achieved:e}, requested {requested:e}")]
    QuadratureFailure { achieved: f64, requested: f64 },
    #[error("degenerate importance weights: effective sample size {ess:.2}")]
    DegenerateWeights { ess: f64 },
    #[error("not estimable: {0}")]
    NotEstimable(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("parse error: {0}")]
    Parse(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
