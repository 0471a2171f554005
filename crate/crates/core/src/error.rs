use thiserror::Error;

/// Errors raised by law construction, the engines and the experiment drivers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("tail index beta must be positive, got {0}")]
    NonPositiveBeta(f64),
    #[error("truncation remainder {0} exceeds 0.5; increase n_max")]
    TruncationTooCoarse(f64),
    #[error("masses must be finite and nonnegative: {0}")]
    InvalidMass(String),
    #[error("masses sum to {0}, expected 1 within 1e-12")]
    NotNormalized(f64),
    #[error("law support has gcd {0} > 1 (periodic chain)")]
    PeriodicLaw(u64),
    #[error("p must lie in (0,1), got {0}")]
    POutOfRange(f64),
    #[error("q must lie in (0,1), got {0}")]
    QOutOfRange(f64),
    #[error("beta must lie in (0,1), got {0}")]
    BetaOutOfRange(f64),
    #[error("law carries no tail index; diagnostic requires a power-law law")]
    MissingTailIndex,
    #[error("requested size {requested} exceeds capacity {limit}")]
    CapacityExceeded { requested: usize, limit: usize },
    #[error("argument {0} outside supported domain")]
    OutOfDomain(f64),
    #[error("series hypothesis violated: {0}")]
    HypothesisViolated(String),
    #[error("coefficient at index {0} is zero inside the fit window")]
    ZeroCoefficientInWindow(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("i/o failure: {0}")]
    Io(String),
}

impl Error {
    pub fn is_capacity(&self) -> bool {
        matches!(self, Error::CapacityExceeded { .. })
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
