//! Complete controllability: Gramians, the Kalman rank test and the
//! minimum-norm steering control.

use nalgebra::{DMatrix, DVector};

use crate::error::{ClqError, Result};
use crate::linalg::{flatten, min_eigenvalue, symmetrize, symmetrized, unflatten};
use crate::model::{eval_functional, ProblemSpec};
use crate::ode::{integrate, DenseSolution};
use crate::options::SolverOptions;
use crate::trajectory::Trajectory;

#[derive(Debug, Clone, PartialEq)]
pub struct Gramian {
    pub t0: f64,
    pub t1: f64,
    pub w: DMatrix<f64>,
    pub min_eig: f64,
}

impl Gramian {
    fn from_matrix(t0: f64, t1: f64, mut w: DMatrix<f64>) -> Self {
        symmetrize(&mut w);
        let min_eig = min_eigenvalue(&w);
        Self { t0, t1, w, min_eig }
    }

    /// `1e-9 · trace(W) / n`.
    pub fn tolerance(&self) -> f64 {
        let n = self.w.nrows().max(1) as f64;
        1e-9 * self.w.trace() / n
    }

    pub fn is_controllable(&self) -> bool {
        self.w.nrows() == 0 || self.min_eig > self.tolerance()
    }
}

fn interval_breaks(spec: &ProblemSpec, lo: f64, hi: f64) -> Vec<f64> {
    spec.breakpoints()
        .into_iter()
        .filter(|&b| b > lo.min(hi) && b < lo.max(hi))
        .collect()
}

/// `Φ_A(s)` with `Φ_A' = A Φ_A`, `Φ_A(0) = I`.
pub fn fundamental_matrix(spec: &ProblemSpec, s: f64, opts: &SolverOptions) -> Result<DMatrix<f64>> {
    let n = spec.n();
    let a = spec.a();
    let sol = integrate(
        |t, y| flatten(&(a.eval(t) * unflatten(y.as_slice(), n, n))),
        0.0,
        flatten(&DMatrix::identity(n, n)),
        s,
        &interval_breaks(spec, 0.0, s),
        &opts.ode(),
        None,
    )?;
    Ok(unflatten(sol.final_state().as_slice(), n, n))
}

/// `Φ_A(s)⁻¹` from the adjoint equation `d/ds Φ_A⁻¹ = -Φ_A⁻¹ A`.
pub fn inverse_fundamental_matrix(
    spec: &ProblemSpec,
    s: f64,
    opts: &SolverOptions,
) -> Result<DMatrix<f64>> {
    let n = spec.n();
    let a = spec.a();
    let sol = integrate(
        |t, y| flatten(&-(unflatten(y.as_slice(), n, n) * a.eval(t))),
        0.0,
        flatten(&DMatrix::identity(n, n)),
        s,
        &interval_breaks(spec, 0.0, s),
        &opts.ode(),
        None,
    )?;
    Ok(unflatten(sol.final_state().as_slice(), n, n))
}

/// Integrates `N' = -N A`, `W' = N B Bᵀ Nᵀ` over `[t0, t1]` from `N(t0)=n0`,
/// `W(t0)=0`. State layout: `[N (n²), W (n²)]`.
fn transition_and_gramian(
    spec: &ProblemSpec,
    t0: f64,
    t1: f64,
    n0: DMatrix<f64>,
    opts: &SolverOptions,
) -> Result<DenseSolution> {
    let n = spec.n();
    let (a, b) = (spec.a(), spec.b());
    let mut y0 = DVector::zeros(2 * n * n);
    y0.rows_mut(0, n * n).copy_from(&flatten(&n0));
    let sol = integrate(
        |t, y| {
            let nm = unflatten(&y.as_slice()[..n * n], n, n);
            let nb = &nm * b.eval(t);
            let dn = -(&nm * a.eval(t));
            let dw = &nb * nb.transpose();
            let mut out = DVector::zeros(2 * n * n);
            out.rows_mut(0, n * n).copy_from(&flatten(&dn));
            out.rows_mut(n * n, n * n).copy_from(&flatten(&dw));
            out
        },
        t0,
        y0,
        t1,
        &interval_breaks(spec, t0, t1),
        &opts.ode(),
        None,
    )?;
    Ok(sol)
}

/// `W = ∫_{t0}^{t1} Φ_A(s)⁻¹B(s)[Φ_A(s)⁻¹B(s)]ᵀ ds`.
pub fn controllability_gramian(
    spec: &ProblemSpec,
    t0: f64,
    t1: f64,
    opts: &SolverOptions,
) -> Result<Gramian> {
    if !(0.0 <= t0 && t0 < t1 && t1 <= spec.horizon() * (1.0 + 1e-12)) {
        return Err(ClqError::InvalidSpec(format!(
            "Gramian interval [{t0}, {t1}] outside [0, {}]",
            spec.horizon()
        )));
    }
    let n = spec.n();
    let inv_at_t0 = if t0 > 0.0 {
        inverse_fundamental_matrix(spec, t0, opts)?
    } else {
        DMatrix::identity(n, n)
    };
    let sol = transition_and_gramian(spec, t0, t1, inv_at_t0, opts)?;
    let w = unflatten(&sol.final_state().as_slice()[n * n..], n, n);
    Ok(Gramian::from_matrix(t0, t1, w))
}

/// Numerical rank of `[B, AB, …, A^{n-1}B]`.
pub fn kalman_rank(a: &DMatrix<f64>, b: &DMatrix<f64>) -> usize {
    let n = a.nrows();
    let m = b.ncols();
    if n == 0 || m == 0 {
        return 0;
    }
    let mut ctrb = DMatrix::zeros(n, n * m);
    let mut block = b.clone();
    for k in 0..n {
        ctrb.view_mut((0, k * m), (n, m)).copy_from(&block);
        block = a * block;
    }
    let sv = ctrb.svd(false, false).singular_values;
    let smax = sv.iter().fold(0.0_f64, |acc, s| acc.max(*s));
    if smax == 0.0 {
        return 0;
    }
    let threshold = (n * m).max(n) as f64 * smax * f64::EPSILON;
    sv.iter().filter(|&&s| s > threshold).count()
}

/// Minimum-norm control steering `x` at `t0` to `y` at `t1`, simulated.
///
/// Uses the transition `N(s) = Φ_A(t0)Φ_A(s)⁻¹` and the Gramian
/// `W = ∫ N B (N B)ᵀ`; the control is `v(s) = -(N(s)B(s))ᵀ W⁻¹ (x - N(t1) y)`.
pub(crate) fn steer(
    spec: &ProblemSpec,
    t0: f64,
    t1: f64,
    x: &DVector<f64>,
    y: &DVector<f64>,
    samples: usize,
    opts: &SolverOptions,
) -> Result<Trajectory> {
    let n = spec.n();
    let flows = transition_and_gramian(spec, t0, t1, DMatrix::identity(n, n), opts)?;
    let end = flows.final_state();
    let n_end = unflatten(&end.as_slice()[..n * n], n, n);
    let gram = Gramian::from_matrix(t0, t1, unflatten(&end.as_slice()[n * n..], n, n));
    if !(gram.min_eig > gram.tolerance()) {
        return Err(ClqError::SingularGramian {
            min_eig: gram.min_eig,
            tol: gram.tolerance(),
        });
    }
    let d = x - &n_end * y;
    let coef = match symmetrized(gram.w.clone()).cholesky() {
        Some(chol) => chol.solve(&d),
        None => gram
            .w
            .clone()
            .lu()
            .solve(&d)
            .ok_or(ClqError::SingularGramian {
                min_eig: gram.min_eig,
                tol: gram.tolerance(),
            })?,
    };
    let b = spec.b();
    let a = spec.a();
    let control = |s: f64| -> DVector<f64> {
        let nm = unflatten(&flows.eval(s).as_slice()[..n * n], n, n);
        -((nm * b.eval(s)).transpose() * &coef)
    };
    let breaks = interval_breaks(spec, t0, t1);
    let states = integrate(
        |s, state| a.eval(s) * state + b.eval(s) * control(s),
        t0,
        x.clone(),
        t1,
        &breaks,
        &opts.ode(),
        None,
    )?;
    let times = sample_times(t0, t1, samples, &breaks);
    let traj_states: Vec<DVector<f64>> = times.iter().map(|&s| states.eval(s)).collect();
    let controls: Vec<DVector<f64>> = times.iter().map(|&s| control(s)).collect();
    let terminal_miss = (states.final_state() - y).norm();
    Ok(Trajectory {
        times,
        states: traj_states,
        controls,
        terminal_miss,
        standoff_gap: 0.0,
        functionals: vec![],
    })
}

/// Uniform samples on `[t0, t1]` merged with interior breakpoints.
pub(crate) fn sample_times(t0: f64, t1: f64, samples: usize, breaks: &[f64]) -> Vec<f64> {
    let count = samples.max(2);
    let mut times: Vec<f64> = (0..count)
        .map(|k| t0 + (t1 - t0) * k as f64 / (count - 1) as f64)
        .chain(breaks.iter().copied().filter(|&b| b > t0 && b < t1))
        .collect();
    times.sort_by(f64::total_cmp);
    times.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * (t1 - t0));
    *times.last_mut().unwrap() = t1;
    times
}

/// Steers `x` from `t0` to zero (`target_zero`) or to the problem's target,
/// reporting every functional of the problem along the way.
pub fn steering_control(
    spec: &ProblemSpec,
    t0: f64,
    x: &DVector<f64>,
    target_zero: bool,
    opts: &SolverOptions,
) -> Result<Trajectory> {
    let target = if target_zero {
        DVector::zeros(spec.n())
    } else {
        spec.y().clone()
    };
    let mut traj = steer(spec, t0, spec.horizon(), x, &target, opts.samples, opts)?;
    traj.functionals = spec
        .functionals()
        .map(|f| eval_functional(f, &traj))
        .collect::<Result<_>>()?;
    Ok(traj)
}
