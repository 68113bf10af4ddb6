use thiserror::Error;

/// Errors produced by the estimation, imputation and inference routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum PupError {
    #[error("insufficient data: {needed} observations needed, {got} available")]
    InsufficientData { needed: usize, got: usize },

    #[error("design matrix is rank deficient (column {column})")]
    SingularDesign { column: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("autocorrelation denominator is zero")]
    ZeroDenominator,

    #[error("horizon {h} too large for {len} residuals")]
    HorizonTooLarge { h: usize, len: usize },

    #[error("covariance matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("estimated AR(1) coefficient {phi} is outside the stationary region")]
    NonstationaryResidual { phi: f64 },

    #[error("{0}")]
    Domain(String),

    #[error("{selected} regressors selected for {obs} observations; use top_k or threshold selection")]
    Overfit { selected: usize, obs: usize },

    #[error("{regressors} regressors for {obs} observations")]
    Overparameterized { regressors: usize, obs: usize },

    #[error("unit {unit} is degenerate (zero variance)")]
    DegenerateUnit { unit: usize },

    #[error("non-finite value in input")]
    NonFinite,
}

pub type Result<T> = std::result::Result<T, PupError>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(PupError::Domain(msg.into()))
}
