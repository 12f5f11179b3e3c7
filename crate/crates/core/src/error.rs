use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid point cloud: {0}")]
    InvalidCloud(String),

    #[error("invalid mixture: {0}")]
    InvalidMixture(String),

    #[error("degenerate mixture component {index}: covariance is not positive definite")]
    DegenerateMixture { index: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("operation requires a {expected} drift model")]
    WrongDriftKind { expected: &'static str },

    #[error("proximal step did not converge in {iterations} iterations (last residual {residual:.3e})")]
    ProxNotConverged { iterations: usize, residual: f64 },

    #[error("numerical breakdown (consider larger γ): {0}")]
    NumericalBreakdown(String),

    #[error("Euler-Maruyama path diverged: {0}")]
    Diverged(String),

    #[error("fixed point did not converge in {iterations} iterations (last residual {residual:.3e})")]
    FixedPointNotConverged { iterations: usize, residual: f64 },

    #[error(
        "Schrödinger bridge iteration did not converge in {iterations} iterations; \
         residual history (phihat0, p0): {history:?}"
    )]
    BridgeNotConverged { iterations: usize, history: Vec<(f64, f64)> },

    #[error("transport problem of size {rows} x {cols} exceeds the exact solver cap of {cap}; subsample the clouds")]
    TransportTooLarge { rows: usize, cols: usize, cap: usize },

    #[error("interpolation system is ill-conditioned (condition estimate {condition:.3e}); try a different shape parameter")]
    IllConditioned { condition: f64 },

    #[error("query point {point:?} lies too far outside the interpolation region")]
    OutsideHull { point: Vec<f64> },

    #[error("control evaluation failed at x = {x:?}, t = {t}: {reason}")]
    ControlEvaluation { x: Vec<f64>, t: f64, reason: String },
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { name, reason: reason.into() }
    }
}
