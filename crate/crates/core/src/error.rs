use thiserror::Error;

use crate::ode::OdeError;

pub type Result<T, E = ClqError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum ClqError {
    #[error("integrator failure: {0}")]
    Integrator(#[from] OdeError),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid problem: {0}")]
    InvalidSpec(String),

    #[error("controllability Gramian is singular (min eigenvalue {min_eig:.3e} <= tolerance {tol:.3e})")]
    SingularGramian { min_eig: f64, tol: f64 },

    #[error("inverse Riccati solution lost positivity at s={s}: min eigenvalue {min_eig:.3e}")]
    NonPositiveSigma { s: f64, min_eig: f64 },

    #[error("evaluation at s={s} is inside the terminal standoff (limit {limit})")]
    StandoffViolation { s: f64, limit: f64 },

    #[error("matrix at s={s} is ill-conditioned (condition estimate {cond:.3e})")]
    IllConditioned { s: f64, cond: f64 },

    #[error("terminal miss {miss:.3e} exceeds tolerance {tol:.3e}")]
    StandoffMiss { miss: f64, tol: f64 },

    #[error("dual ascent did not converge within {iterations} iterations")]
    MaxIterExceeded { iterations: usize },

    #[error("dual function unbounded along lambda={lambda:?} (phi={phi:.6e}); no strictly feasible control")]
    UnboundedDual { lambda: Vec<f64>, phi: f64 },

    #[error("KKT system is singular: {0}")]
    SingularKkt(String),

    #[error("transcribed problem is infeasible: {0}")]
    InfeasibleQp(String),

    #[error("trajectory has no samples")]
    EmptyTrajectory,

    #[error("problem file: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
