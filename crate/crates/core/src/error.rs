use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(&'static str),
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),
    #[error("weight row is all zeros")]
    ZeroWeights,
    #[error("matrix is not row stochastic (max row-sum deviation {deviation:e}): {context}")]
    NotStochastic {
        context: &'static str,
        deviation: f64,
    },
    #[error("matrix is not primitive: {0}")]
    NotPrimitive(&'static str),
    #[error("unstable: spectral radius {rho} >= 1")]
    Unstable { rho: f64 },
    #[error("{what} did not converge within {iterations} iterations")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(
        "radius too small for connectivity: no strongly connected layout after {attempts} attempts"
    )]
    Disconnected { attempts: usize },
    #[error("input is not a fixed point (residual {residual:e})")]
    NotFixedPoint { residual: f64 },
    #[error("monotonicity violated at iteration {iteration}, node {node}: min eigenvalue of increment {min_eigenvalue:e}")]
    MonotonicityViolation {
        iteration: usize,
        node: usize,
        min_eigenvalue: f64,
    },
    #[error("information sum is not detectable with the state matrix")]
    Undetectable,
}

impl Error {
    /// Short stable identifier, used in machine-readable error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::NotPositiveDefinite(_) => "not_positive_definite",
            Error::InvalidMatrix(_) => "invalid_matrix",
            Error::ZeroWeights => "zero_weights",
            Error::NotStochastic { .. } => "not_stochastic",
            Error::NotPrimitive(_) => "not_primitive",
            Error::Unstable { .. } => "unstable",
            Error::NoConvergence { .. } => "no_convergence",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::Disconnected { .. } => "disconnected",
            Error::NotFixedPoint { .. } => "not_fixed_point",
            Error::MonotonicityViolation { .. } => "monotonicity_violation",
            Error::Undetectable => "undetectable",
        }
    }
}
