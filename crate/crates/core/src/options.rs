use crate::ode::OdeOptions;
use crate::par::Execution;

/// Numerical settings shared by every stage of the pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Terminal standoff as a fraction of `T - t0`. The same fraction is used
    /// for the initial standoff of the reversed-time solution.
    pub eps_frac: f64,
    /// Absolute standoff; overrides `eps_frac` when set.
    pub eps_t: Option<f64>,
    pub cond_max: f64,
    /// Largest condition number of `Σ` at which the feedback loop still
    /// inverts it; closer to `T` the optimal trajectory is continued through
    /// the Hamiltonian system instead.
    pub feedback_cond_max: f64,
    /// Uniform samples of the closed loop on `[t0, T - eps_T]`.
    pub samples: usize,
    /// Samples of the steering correction on `[T - eps_T, T]`.
    pub tail_samples: usize,
    /// Relative tolerance for value/simulation consistency.
    pub sim_tol: f64,
    /// Terminal miss tolerance is `miss_tol * (1 + |y|)`.
    pub miss_tol: f64,
    pub dual_tol: f64,
    pub max_iter: usize,
    /// Dual values above this (relative to `1 + |phi(0)|`) are treated as
    /// divergence along a ray.
    pub dual_cap: f64,
    pub n_oracle: usize,
    pub execution: Execution,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-9,
            atol: 1e-11,
            eps_frac: 1e-3,
            eps_t: None,
            cond_max: 1e12,
            feedback_cond_max: 1e6,
            samples: 2001,
            tail_samples: 41,
            sim_tol: 1e-3,
            miss_tol: 1e-4,
            dual_tol: 1e-6,
            max_iter: 500,
            dual_cap: 1e6,
            n_oracle: 400,
            execution: Execution::default(),
        }
    }
}

impl SolverOptions {
    pub fn ode(&self) -> OdeOptions {
        OdeOptions {
            rtol: self.rtol,
            atol: self.atol,
            ..OdeOptions::default()
        }
    }

    pub fn standoff(&self, t0: f64, horizon: f64) -> f64 {
        self.eps_t.unwrap_or(self.eps_frac * (horizon - t0))
    }
}
