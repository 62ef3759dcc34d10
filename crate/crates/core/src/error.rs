use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is not symmetric positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("objective is not strongly convex (modulus {0})")]
    NotStronglyConvex(f64),

    #[error("step size {tau} violates the bound {limit}")]
    StepSize { tau: f64, limit: f64 },

    #[error("objective has no proximal oracle: {0}")]
    UnsupportedObjective(String),

    #[error("inner solver did not reach tolerance {tol} (residual {residual})")]
    ToleranceNotReached { tol: f64, residual: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("matrix has deficient row rank")]
    RankDeficient,

    #[error("network graph is not connected")]
    Disconnected,

    #[error("inconsistent selection maps: {0}")]
    InconsistentSelectors(String),

    #[error("local solver for agent {agent} returned an infeasible point at iteration {k} (violation {violation})")]
    InfeasibleLocal { agent: usize, k: usize, violation: f64 },

    #[error("agent {reader} read data of non-neighbour {source_agent}")]
    NonNeighbourAccess { reader: usize, source_agent: usize },

    #[error("pair (A, B) of agent {0} is not controllable")]
    Uncontrollable(usize),

    #[error("only input coupling is supported; agent {0} has state coupling")]
    StateCoupling(usize),

    #[error("resampling budget exhausted: {0}")]
    ResampleBudget(String),

    #[error("iteration cap {0} reached")]
    IterationCap(usize),

    #[error("warm start is infeasible (violation {0})")]
    InfeasibleWarmStart(f64),

    #[error("instance format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
