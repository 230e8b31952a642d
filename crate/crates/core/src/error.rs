use thiserror::Error;

/// Which matrix of a model failed a definiteness or shape check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelMatrix {
    A,
    C,
    Q,
    R,
    PriorCov,
    PriorMean,
    TerminalCov,
}

impl std::fmt::Display for ModelMatrix {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            ModelMatrix::A => "A",
            ModelMatrix::C => "C",
            ModelMatrix::Q => "Q",
            ModelMatrix::R => "R",
            ModelMatrix::PriorCov => "prior_cov",
            ModelMatrix::PriorMean => "prior_mean",
            ModelMatrix::TerminalCov => "terminal_cov",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("{0} is not positive semidefinite")]
    NotPsd(ModelMatrix),

    #[error("{0} is not positive definite")]
    NotPd(ModelMatrix),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("(A, C) is not observable")]
    NotObservable,

    #[error("innovation covariance C Σ Cᵀ + R is numerically singular")]
    SingularInnovation,

    #[error("measurement window has {got} entries, expected {expected}")]
    WindowLengthMismatch { expected: usize, got: usize },

    #[error("measurement sequence is empty")]
    EmptyMeasurements,

    #[error("quadratic program is infeasible at t = {t}")]
    SolverInfeasible { t: usize },

    #[error("Riccati iteration did not converge after {iterations} iterations (residual {residual:e})")]
    RiccatiNoConverge { iterations: usize, residual: f64 },

    #[error("QP Hessian is not positive definite")]
    HessianNotPd,

    #[error("constraint set is empty")]
    EmptyConstraintSet,

    #[error("invalid tolerance: {0}")]
    InvalidTolerance(&'static str),

    #[error("invalid estimator configuration: {0}")]
    InvalidConfig(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
