use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid subset: {0}")]
    InvalidSubset(String),

    #[error("singular weighted design on a subset of {size} observations (reciprocal condition {rcond:.3e})")]
    SingularDesign { size: usize, rcond: f64 },

    #[error("insufficient events: {0}")]
    InsufficientEvents(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid penalty: {0}")]
    InvalidPenalty(String),

    #[error("nonconvex subproblem: curvature {curvature} must exceed {bound}")]
    NonconvexSubproblem { curvature: f64, bound: f64 },

    #[error("degenerate refine window: no admissible split point in ({lower}, {upper}]")]
    DegenerateWindow { lower: f64, upper: f64 },

    #[error("invalid thresholds: {0}")]
    InvalidThresholds(String),

    #[error("infeasible configuration: {0}")]
    InfeasibleConfig(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerical routines rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SingularDesign { .. }
                | Error::NonconvexSubproblem { .. }
                | Error::DegenerateWindow { .. }
                | Error::InsufficientEvents(_)
                | Error::InvalidThresholds(_)
                | Error::InfeasibleConfig(_)
        )
    }
}
