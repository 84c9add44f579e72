use std::path::PathBuf;

use nalgebra::Vector2;

use crate::cilqr::OcpSolution;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Allocation matrix rank or nullspace dimension is wrong.
    #[error("rotor geometry has rank {rank} (nullspace dimension {nullity}); need rank 6 and a 2-D nullspace")]
    GeometryRank { rank: usize, nullity: usize },

    /// No nullspace shift satisfies the motor bounds. `best` minimizes the largest violation.
    #[error("motor bounds infeasible: least max violation {max_violation:.3e} N")]
    Infeasible {
        best: Vector2<f64>,
        max_violation: f64,
    },

    #[error("motor configuration: {0}")]
    MotorConfig(String),

    #[error("non-finite value at step {step}: {what}")]
    Numerical { step: usize, what: String },

    #[error("solver failure: {reason}")]
    SolverFailure {
        reason: String,
        best: Box<OcpSolution>,
    },

    /// More receding-horizon cycles fell back to MBNO than the configured budget allows.
    #[error("{used} solver fallbacks at step {step} exceed the budget of {budget}")]
    FallbackBudget {
        step: usize,
        used: usize,
        budget: usize,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
