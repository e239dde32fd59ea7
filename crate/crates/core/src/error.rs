use thiserror::Error;

/// Errors produced by model construction, simulation, identification and the
/// dissipativity pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("simulation diverged: first non-finite state at sample index {index} (t = {time})")]
    Divergence { index: usize, time: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("rank deficient regression: {0}")]
    RankDeficient(String),

    #[error(
        "matrix logarithm failed: {0}; try a smaller sample period or a different model order"
    )]
    MatrixLog(String),

    #[error("degenerate model: {0}")]
    Degenerate(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("no feasible perturbation found for gamma in (0, {gamma_max}]: {detail}")]
    GammaExhausted { gamma_max: f64, detail: String },

    #[error("rho escalation exhausted after {iters} iterations at gamma = {gamma}")]
    RhoItersExhausted { gamma: f64, iters: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
