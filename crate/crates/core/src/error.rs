use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("unsupported norm exponent {0}; expected 1, 2 or inf")]
    UnsupportedNorm(f64),

    #[error("attack budget must be finite and >= 0, got {0}")]
    InvalidBudget(f64),

    #[error("noise standard deviation must be > 0, got {0}")]
    InvalidNoise(f64),

    #[error("covariance is not positive semidefinite (min eigenvalue {0:e})")]
    NotPsd(f64),

    #[error("covariance is not symmetric")]
    NotSymmetric,

    #[error("theta_opt is nonzero at index {0}, outside the core set")]
    ThetaOutsideCore(usize),

    #[error("core index {index} out of range for dimension {dim}")]
    CoreIndexOutOfRange { index: usize, dim: usize },

    #[error("invalid feature counts: m = {m}, c = {c} (need 1 <= c < m)")]
    InvalidFeatureCounts { m: usize, c: usize },

    #[error("{name} must be >= 0, got {value}")]
    Negative { name: &'static str, value: f64 },

    #[error("scale must be > 0, got {0}")]
    NonPositiveScale(f64),

    #[error("row {0} has zero norm")]
    ZeroRow(usize),

    #[error("NFS is undefined for the zero vector")]
    ZeroVector,

    #[error("invalid option: {0}")]
    InvalidOption(String),

    #[error("csv output failed: {0}")]
    Csv(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e.to_string())
    }
}
