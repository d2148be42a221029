use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("target is colocated with IRS {0}")]
    ColocatedTarget(usize),

    #[error("noise covariance is singular")]
    SingularNoiseCov,

    #[error("program is infeasible (residual {residual:.3e})")]
    Infeasible { residual: f64 },

    #[error("reflection vector of IRS {irs} leaves no power budget ({budget:.3e} W)")]
    InfeasiblePsi { irs: usize, budget: f64 },

    #[error("IRS {0} has zero Fisher information (degenerate reflection)")]
    DegeneratePsi(usize),

    #[error("no feasible reflection candidate for IRS {0}")]
    NoFeasibleCandidate(usize),

    #[error("scenario is infeasible: {0}")]
    InfeasibleScenario(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
