//! Closed-loop synthesis for a fixed multiplier λ.
//!
//! The optimal control of the λ-weighted problem is
//! `u(s) = −R⁻¹Bᵀ(P(s)X(s) + η(s))`, a feedback on both the current state
//! and the target. The gain is singular at `T`, so the loop runs to
//! `T − eps_T` and the remaining displacement is closed by the minimum-norm
//! steering control on `[T − eps_T, T]`.
//!
//! When `Σ` is too ill-conditioned to invert near `T − eps_T` (several
//! states behind a single input), the loop stops earlier and the optimal
//! trajectory is continued through the Hamiltonian system
//! `X' = AX − BR⁻¹Bᵀp`, `p' = −QX − Aᵀp` up to `T − eps_T`.

use nalgebra::{DMatrix, DVector};

use crate::controllability::{sample_times, steer};
use crate::error::{ClqError, Result};
use crate::linalg::{flatten, unflatten};
use crate::model::{eval_functional, LambdaWeights, ProblemSpec};
use crate::ode::integrate;
use crate::options::SolverOptions;
use crate::riccati::{target_profile, RiccatiBundle, TargetProfile};
use crate::trajectory::Trajectory;

/// Optimal feedback for the λ-weighted problem.
#[derive(Debug, Clone)]
pub struct FeedbackLaw {
    pub lam: LambdaWeights,
    pub bundle: RiccatiBundle,
    pub y: DVector<f64>,
    pub eps_t: f64,
    /// `Ψ(T)ᵀ y`
    eta_rhs: DVector<f64>,
    target: TargetProfile,
}

impl FeedbackLaw {
    pub fn new(spec: &ProblemSpec, lam: &LambdaWeights, opts: &SolverOptions) -> Result<Self> {
        let bundle = RiccatiBundle::solve(spec, lam, opts)?;
        Self::from_bundle(bundle, spec.y().clone(), opts)
    }

    pub fn from_bundle(bundle: RiccatiBundle, y: DVector<f64>, opts: &SolverOptions) -> Result<Self> {
        let eta_rhs = bundle.psi_terminal().transpose() * &y;
        let target = target_profile(&bundle, &y, opts)?;
        Ok(Self {
            lam: bundle.lam.clone(),
            eps_t: bundle.eps_t,
            bundle,
            y,
            eta_rhs,
            target,
        })
    }

    /// `K(s) = R⁻¹BᵀP(s)`.
    pub fn gain(&self, s: f64) -> Result<DMatrix<f64>> {
        Ok(self.bundle.system().r_inv_bt(s) * self.bundle.p(s)?)
    }

    /// `Σ(s)⁻¹ v` by Cholesky, for `s ≤ T − eps_T`.
    fn sigma_solve(&self, s: f64, v: &DVector<f64>) -> Result<DVector<f64>> {
        let limit = self.standoff_end();
        if s > limit + 1e-14 * self.bundle.horizon().max(1.0) {
            return Err(ClqError::StandoffViolation { s, limit });
        }
        self.bundle
            .sigma(s)
            .cholesky()
            .map(|c| c.solve(v))
            .ok_or(ClqError::IllConditioned { s, cond: f64::INFINITY })
    }

    /// `η(s) = −Σ(s)⁻¹w(s)`.
    pub fn eta(&self, s: f64) -> Result<DVector<f64>> {
        Ok(-self.sigma_solve(s, &self.target.eval(s))?)
    }

    /// `w(s) = −Σ(s)η(s)`, regular on `[t0, T]` with `w(T) = y`.
    pub fn target(&self, s: f64) -> DVector<f64> {
        self.target.eval(s)
    }

    /// Costate `p(s) = P(s)x + η(s) = Σ(s)⁻¹(x − w(s))`.
    pub fn costate(&self, s: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.sigma_solve(s, &(x - self.target.eval(s)))
    }

    /// `u(s) = −K(s)x − R⁻¹Bᵀη(s)`.
    pub fn control(&self, s: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(-(self.bundle.system().r_inv_bt(s) * self.costate(s, x)?))
    }

    pub fn standoff_end(&self) -> f64 {
        self.bundle.standoff_end()
    }

    /// End of the feedback segment; see [`RiccatiBundle::feedback_end`].
    pub fn feedback_end(&self) -> f64 {
        self.bundle.feedback_end()
    }
}

/// `⟨P(t)x,x⟩ − 2⟨Ψ(T)Φ(t)⁻¹x, y⟩ + ⟨Π(T)y,y⟩` from a solved bundle.
///
/// Terms that vanish because `x = 0` or `y = 0` are skipped, so the
/// special slices reduce exactly to `⟨P(t)x,x⟩` and `⟨Π(T)y,y⟩`.
pub fn value_from_bundle(bundle: &RiccatiBundle, x: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
    let t0 = bundle.t0;
    let x_zero = x.iter().all(|v| *v == 0.0);
    let y_zero = y.iter().all(|v| *v == 0.0);
    let mut v = 0.0;
    if !x_zero {
        v += x.dot(&(bundle.p(t0)? * x));
    }
    if !x_zero && !y_zero {
        let z = bundle
            .phi(t0)
            .lu()
            .solve(x)
            .ok_or(ClqError::IllConditioned { s: t0, cond: f64::INFINITY })?;
        v -= 2.0 * (bundle.psi_terminal() * z).dot(y);
    }
    if !y_zero {
        v += y.dot(&(bundle.pi(bundle.horizon())? * y));
    }
    Ok(v)
}

/// Optimal value `V(λ, t0, x, y)` of the λ-weighted problem.
pub fn value_function(spec: &ProblemSpec, lam: &LambdaWeights, opts: &SolverOptions) -> Result<f64> {
    let bundle = RiccatiBundle::solve(spec, lam, opts)?;
    value_from_bundle(&bundle, spec.x(), spec.y())
}

fn lambda_dot_c(spec: &ProblemSpec, lam: &LambdaWeights) -> f64 {
    lam.as_slice().iter().zip(spec.bounds()).map(|(l, c)| l * c).sum()
}

/// Dual function `L(λ) = V(λ) − λᵀc`.
pub fn dual_value(spec: &ProblemSpec, lam: &LambdaWeights, opts: &SolverOptions) -> Result<f64> {
    Ok(value_function(spec, lam, opts)? - lambda_dot_c(spec, lam))
}

/// `J_0 + Σ λ_i J_i` of an evaluated trajectory.
pub fn cost_under_lambda(lam: &LambdaWeights, traj: &Trajectory) -> f64 {
    let j0 = traj.functionals.first().copied().unwrap_or(0.0);
    j0 + lam
        .as_slice()
        .iter()
        .zip(traj.functionals.iter().skip(1))
        .map(|(l, j)| l * j)
        .sum::<f64>()
}

fn interior(breaks: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    breaks.iter().copied().filter(|&b| b > lo && b < hi).collect()
}

fn segment(times: Vec<f64>, states: Vec<DVector<f64>>, controls: Vec<DVector<f64>>) -> Trajectory {
    Trajectory {
        times,
        states,
        controls,
        terminal_miss: 0.0,
        standoff_gap: 0.0,
        functionals: vec![],
    }
}

/// Optimal trajectory on `[t_a, t_b]` from the Hamiltonian system
/// `X' = AX − BR⁻¹Bᵀp`, `p' = −QX − Aᵀp`, with `u = −R⁻¹Bᵀp`.
/// Returns the sampled segment and the end costate.
fn hamiltonian_segment(
    law: &FeedbackLaw,
    (t_a, t_b): (f64, f64),
    x: &DVector<f64>,
    p: &DVector<f64>,
    samples: usize,
    opts: &SolverOptions,
) -> Result<(Trajectory, DVector<f64>)> {
    let sys = law.bundle.system();
    let n = x.len();
    let split = |z: &DVector<f64>| (z.rows(0, n).into_owned(), z.rows(n, n).into_owned());
    let breaks = interior(sys.breakpoints(), t_a, t_b);
    let mut z0 = DVector::zeros(2 * n);
    z0.rows_mut(0, n).copy_from(x);
    z0.rows_mut(n, n).copy_from(p);
    let flow = integrate(
        |s, z| {
            let (x, p) = split(z);
            let a = sys.a(s);
            let mut dz = DVector::zeros(2 * n);
            dz.rows_mut(0, n).copy_from(&(&a * &x - sys.brb(s) * &p));
            dz.rows_mut(n, n).copy_from(&(-(sys.q(s) * &x) - a.transpose() * &p));
            dz
        },
        t_a,
        z0,
        t_b,
        &breaks,
        &opts.ode(),
        None,
    )?;
    let times = sample_times(t_a, t_b, samples, &breaks);
    let (xs, us) = times
        .iter()
        .map(|&s| {
            let (x, p) = split(&flow.eval(s));
            (x, -(sys.r_inv_bt(s) * p))
        })
        .unzip();
    Ok((segment(times, xs, us), split(&flow.final_state()).1))
}

/// Runs the feedback from `spec.x()` at `t0` to the feedback end, bridges to
/// `T − eps_T` along the Hamiltonian flow if needed, then steers the
/// remaining gap to `y`.
///
/// If the steering Gramian of `[T − eps_T, T]` is numerically singular the
/// Hamiltonian flow is continued to `T` instead; its costate stays finite
/// there.
///
/// Functionals are sums of trapezoid sums over the segments, which keeps
/// the control jump at `T − eps_T` out of any quadrature panel.
pub fn simulate_closed_loop(spec: &ProblemSpec, law: &FeedbackLaw, opts: &SolverOptions) -> Result<Trajectory> {
    let t0 = spec.t0();
    let horizon = spec.horizon();
    let te = law.standoff_end();
    let tf = law.feedback_end();
    if !(tf > t0) {
        return Err(ClqError::StandoffViolation { s: t0, limit: tf });
    }
    // fail early with a typed error rather than through a NaN in the ODE
    law.control(tf, spec.x())?;

    let sys = law.bundle.system();
    let n = spec.n();
    let breaks = interior(sys.breakpoints(), t0, tf);
    let states = integrate(
        |s, x| match law.control(s, x) {
            Ok(u) => sys.a(s) * x + sys.b(s) * u,
            Err(_) => DVector::from_element(n, f64::NAN),
        },
        t0,
        spec.x().clone(),
        tf,
        &breaks,
        &opts.ode(),
        None,
    )?;
    let times = sample_times(t0, tf, opts.samples, &breaks);
    let xs: Vec<DVector<f64>> = times.iter().map(|&s| states.eval(s)).collect();
    let us = times
        .iter()
        .zip(&xs)
        .map(|(&s, x)| law.control(s, x))
        .collect::<Result<Vec<_>>>()?;
    let mut segments = vec![segment(times, xs, us)];
    let mut x_end = states.final_state();
    let mut p_end = law.costate(tf, &x_end)?;

    let share = |a: f64, b: f64| (((b - a) / (horizon - t0) * opts.samples as f64).ceil() as usize).max(opts.tail_samples);
    if te > tf {
        let (bridge, p) = hamiltonian_segment(law, (tf, te), &x_end, &p_end, share(tf, te), opts)?;
        x_end = bridge.states.last().expect("bridge samples").clone();
        p_end = p;
        segments.push(bridge);
    }

    let standoff_gap = (&x_end - &law.y).norm();
    let tail = match steer(spec, te, horizon, &x_end, &law.y, opts.tail_samples, opts) {
        Err(ClqError::SingularGramian { .. }) => {
            let (mut tail, _) = hamiltonian_segment(law, (te, horizon), &x_end, &p_end, opts.tail_samples, opts)?;
            tail.terminal_miss = (tail.states.last().expect("tail samples") - &law.y).norm();
            tail
        }
        other => other?,
    };
    let terminal_miss = tail.terminal_miss;
    segments.push(tail);

    let functionals = spec
        .functionals()
        .map(|f| segments.iter().map(|seg| eval_functional(f, seg)).sum::<Result<f64>>())
        .collect::<Result<Vec<f64>>>()?;

    let mut parts = segments.into_iter();
    let mut traj = parts.next().expect("loop segment");
    for seg in parts {
        traj.times.extend(seg.times.iter().skip(1));
        traj.states.extend(seg.states.into_iter().skip(1));
        traj.controls.extend(seg.controls.into_iter().skip(1));
    }
    traj.terminal_miss = terminal_miss;
    traj.standoff_gap = standoff_gap;
    traj.functionals = functionals;

    let tol = opts.miss_tol * (1.0 + law.y.norm());
    if !(traj.terminal_miss <= tol) {
        return Err(ClqError::StandoffMiss {
            miss: traj.terminal_miss,
            tol,
        });
    }
    Ok(traj)
}

/// Solves the λ-weighted problem and simulates it in one call.
pub fn solve_weighted(spec: &ProblemSpec, lam: &LambdaWeights, opts: &SolverOptions) -> Result<(FeedbackLaw, Trajectory)> {
    let law = FeedbackLaw::new(spec, lam, opts)?;
    let traj = simulate_closed_loop(spec, &law, opts)?;
    Ok((law, traj))
}

/// Closed-loop state from the flows alone:
/// `X(s) = Φ(s)[Φ(t0)⁻¹x + ∫_{t0}^s Φ⁻¹BR⁻¹BᵀΦ⁻ᵀ dr · Ψ(T)ᵀy]`.
///
/// An independent path to the simulated state, valid up to the feedback end.
pub fn flow_state(law: &FeedbackLaw, x: &DVector<f64>, times: &[f64], opts: &SolverOptions) -> Result<Vec<DVector<f64>>> {
    let bundle = &law.bundle;
    let t0 = bundle.t0;
    let te = law.feedback_end();
    let n = x.len();
    let sys = bundle.system();
    let phi0 = bundle.phi(t0).lu();
    let base = phi0
        .solve(x)
        .ok_or(ClqError::IllConditioned { s: t0, cond: f64::INFINITY })?;
    let inv_phi = |s: f64| bundle.phi(s).try_inverse();
    let gram = integrate(
        |s, _| match inv_phi(s) {
            Some(pi) => flatten(&(&pi * sys.brb(s) * pi.transpose())),
            None => DVector::from_element(n * n, f64::NAN),
        },
        t0,
        DVector::zeros(n * n),
        te,
        &interior(sys.breakpoints(), t0, te),
        &opts.ode(),
        None,
    )?;
    times
        .iter()
        .map(|&s| {
            if s > te {
                return Err(ClqError::StandoffViolation { s, limit: te });
            }
            let m = unflatten(gram.eval(s).as_slice(), n, n);
            Ok(bundle.phi(s) * (&base + m * &law.eta_rhs))
        })
        .collect()
}
