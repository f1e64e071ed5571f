//! Linear-quadratic optimal control with a fixed terminal state and integral
//! quadratic constraints.
//!
//! The constrained problem is reduced to a family of λ-weighted problems
//! with only the terminal equality constraint. Each of those is solved in
//! closed loop from two singular Riccati equations, integrated through their
//! inverses, and the multipliers are chosen by maximizing the concave dual
//! function. A dense direct-transcription solver provides an independent
//! check.

// `!(a <= b)` is used on purpose so that NaN takes the failure branch
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod controllability;
pub mod dual;
pub mod error;
pub mod linalg;
pub mod model;
pub mod ode;
pub mod options;
pub mod oracle;
pub mod par;
pub mod problem_file;
pub mod riccati;
pub mod synthesis;
pub mod system;
pub mod trajectory;

pub use error::{ClqError, Result};
pub use model::{LambdaWeights, ProblemSpec, QuadraticFunctional, TimeGridMatrixFn};
pub use options::SolverOptions;
pub use par::Execution;
pub use trajectory::Trajectory;
