//! Riccati equations with an infinite endpoint value.
//!
//! `P` blows up at `T`, so it is never integrated directly. Its inverse `Σ`
//! solves
//!
//! ```text
//! Σ' = AΣ + ΣAᵀ + ΣQΣ − BR⁻¹Bᵀ,   Σ(T) = 0,
//! ```
//!
//! which is regular, and `P = Σ⁻¹` is recovered away from a standoff
//! `eps_T` before `T`. `Π` (blowing up at `t0`) is the same construction on
//! the time-reversed system. The penalized family `P_i(T) = i·I` converges
//! to `P` from below and serves as an independent check.

use nalgebra::{DMatrix, DVector};

use crate::error::{ClqError, Result};
use crate::linalg::{flatten, min_eigenvalue, spd_condition, spd_inverse, symmetrize, symmetrized, unflatten};
use crate::model::{LambdaWeights, ProblemSpec};
use crate::ode::{integrate, DenseSolution};
use crate::options::SolverOptions;
use crate::system::LqSystem;

const SIGMA_NEG_TOL: f64 = -1e-10;

fn symmetrize_flat(n: usize) -> impl Fn(&mut DVector<f64>) {
    move |v: &mut DVector<f64>| {
        let s = v.as_mut_slice();
        for i in 0..n {
            for j in (i + 1)..n {
                let avg = 0.5 * (s[i + j * n] + s[j + i * n]);
                s[i + j * n] = avg;
                s[j + i * n] = avg;
            }
        }
    }
}

/// Dense `Σ(·)` on `[t_lo, t_hi]` with `Σ(t_hi) = 0`.
#[derive(Debug, Clone)]
pub struct SigmaSolution {
    dense: DenseSolution,
    n: usize,
    t_lo: f64,
    t_hi: f64,
}

impl SigmaSolution {
    pub fn eval(&self, s: f64) -> DMatrix<f64> {
        if s >= self.t_hi {
            return DMatrix::zeros(self.n, self.n);
        }
        symmetrized(unflatten(self.dense.eval(s).as_slice(), self.n, self.n))
    }

    pub fn t_lo(&self) -> f64 {
        self.t_lo
    }

    pub fn t_hi(&self) -> f64 {
        self.t_hi
    }

    pub fn steps(&self) -> usize {
        self.dense.steps()
    }
}

fn sigma_rhs(sys: &LqSystem, s: f64, sigma: &DMatrix<f64>) -> DMatrix<f64> {
    let a = sys.a(s);
    let a_sigma = &a * sigma;
    let mut d = &a_sigma + a_sigma.transpose() + sigma * sys.q(s) * sigma - sys.brb(s);
    symmetrize(&mut d);
    d
}

pub(crate) fn solve_sigma_system(
    sys: &LqSystem,
    t_lo: f64,
    t_hi: f64,
    opts: &SolverOptions,
) -> Result<SigmaSolution> {
    let n = sys.n();
    let project = symmetrize_flat(n);
    let dense = integrate(
        |s, y| flatten(&sigma_rhs(sys, s, &unflatten(y.as_slice(), n, n))),
        t_hi,
        DVector::zeros(n * n),
        t_lo,
        sys.breakpoints(),
        &opts.ode(),
        Some(&project),
    )?;
    for (s, y) in dense.nodes().skip(1) {
        let min_eig = min_eigenvalue(&unflatten(y.as_slice(), n, n));
        if min_eig < SIGMA_NEG_TOL {
            return Err(ClqError::NonPositiveSigma { s, min_eig });
        }
    }
    Ok(SigmaSolution { dense, n, t_lo, t_hi })
}

/// Backward solve of the inverse Riccati equation on `[0, T]`.
pub fn solve_sigma(spec: &ProblemSpec, lam: &LambdaWeights, opts: &SolverOptions) -> Result<SigmaSolution> {
    let sys = LqSystem::from_spec(spec, lam)?;
    solve_sigma_system(&sys, 0.0, spec.horizon(), opts)
}

/// First-order behaviour of `Σ` near `T`: `∫_s^T B R⁻¹ Bᵀ dr` (composite
/// Simpson). Diagnostic only.
pub fn sigma_asymptotic(spec: &ProblemSpec, lam: &LambdaWeights, s: f64) -> Result<DMatrix<f64>> {
    let sys = LqSystem::from_spec(spec, lam)?;
    let (lo, hi) = (s, spec.horizon());
    let panels = 64;
    let h = (hi - lo) / (2 * panels) as f64;
    let mut acc = DMatrix::zeros(spec.n(), spec.n());
    for k in 0..=2 * panels {
        let w = if k == 0 || k == 2 * panels {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        acc += sys.brb(lo + k as f64 * h) * w;
    }
    Ok(acc * (h / 3.0))
}

/// `P(s) = Σ(s)⁻¹` for `s ≤ T - eps_t`.
pub fn recover_p(sigma: &SigmaSolution, s: f64, eps_t: f64, cond_max: f64) -> Result<DMatrix<f64>> {
    let limit = sigma.t_hi - eps_t;
    if s > limit + 1e-14 * sigma.t_hi.abs().max(1.0) {
        return Err(ClqError::StandoffViolation { s, limit });
    }
    invert_checked(&sigma.eval(s), s, cond_max)
}

fn invert_checked(m: &DMatrix<f64>, s: f64, cond_max: f64) -> Result<DMatrix<f64>> {
    let cond = spd_condition(m);
    if !(cond <= cond_max) {
        return Err(ClqError::IllConditioned { s, cond });
    }
    spd_inverse(m).ok_or(ClqError::IllConditioned { s, cond })
}

/// Closed-loop flow `Φ` and its companion `Ψ` on `[0, T]`.
///
/// Up to the feedback end (`T − eps_T` unless `Σ` is too ill-conditioned
/// there) both are integrated from their own equations with the gain
/// `R⁻¹BᵀΣ⁻¹`. On the last segment `Ψ' = -(Aᵀ + QΣ)Ψ` is used and `Φ = ΣΨ`,
/// which extends `Φ` continuously to `Φ(T) = 0`.
#[derive(Debug, Clone)]
pub struct Flows {
    forward: DenseSolution,
    tail: DenseSolution,
    sigma: SigmaSolution,
    split: f64,
    n: usize,
}

impl Flows {
    pub fn split(&self) -> f64 {
        self.split
    }

    pub fn phi(&self, s: f64) -> DMatrix<f64> {
        let n = self.n;
        if s <= self.split {
            unflatten(&self.forward.eval(s).as_slice()[..n * n], n, n)
        } else {
            self.sigma.eval(s) * self.psi(s)
        }
    }

    pub fn psi(&self, s: f64) -> DMatrix<f64> {
        let n = self.n;
        if s <= self.split {
            unflatten(&self.forward.eval(s).as_slice()[n * n..], n, n)
        } else {
            unflatten(self.tail.eval(s).as_slice(), n, n)
        }
    }
}

/// Last time at which the feedback inverts `Σ`: `T − eps_T·2^j` for the
/// smallest `j` with `cond Σ ≤ feedback_cond_max`, searched down to the
/// midpoint of `[t0, T]`. Failing that, the best candidate within
/// `cond_max` is used.
pub(crate) fn feedback_end(sigma: &SigmaSolution, t0: f64, eps_t: f64, opts: &SolverOptions) -> Result<f64> {
    let t_hi = sigma.t_hi;
    let floor = 0.5 * (t0 + t_hi);
    let mut best: Option<(f64, f64)> = None;
    let mut gap = eps_t;
    while t_hi - gap >= floor {
        let s = t_hi - gap;
        let m = sigma.eval(s);
        let cond = if min_eigenvalue(&m) > 0.0 { spd_condition(&m) } else { f64::INFINITY };
        if cond <= opts.feedback_cond_max {
            return Ok(s);
        }
        if best.is_none_or(|(_, c)| cond < c) {
            best = Some((s, cond));
        }
        gap *= 2.0;
    }
    match best {
        Some((s, cond)) if cond <= opts.cond_max => Ok(s),
        Some((s, cond)) => Err(ClqError::IllConditioned { s, cond }),
        None => Ok(t_hi - eps_t),
    }
}

/// Forward `[Φ, Ψ]` on `[t_lo, split]` with the gain `R⁻¹BᵀΣ⁻¹`, then the
/// inversion-free tail up to `T`.
pub(crate) fn solve_flows_system(
    sys: &LqSystem,
    sigma: &SigmaSolution,
    split: f64,
    opts: &SolverOptions,
) -> Result<Flows> {
    let n = sys.n();
    let t_hi = sigma.t_hi;
    let p0 = invert_checked(&sigma.eval(sigma.t_lo), sigma.t_lo, opts.cond_max)?;
    // conditioning is worst at the end of the forward segment
    invert_checked(&sigma.eval(split), split, opts.cond_max)?;

    let mut y0 = DVector::zeros(2 * n * n);
    y0.rows_mut(0, n * n).copy_from(&flatten(&DMatrix::identity(n, n)));
    y0.rows_mut(n * n, n * n).copy_from(&flatten(&p0));
    let breaks: Vec<f64> = sys.breakpoints().iter().copied().filter(|&b| b < split).collect();
    let forward = integrate(
        |s, y| {
            let phi = unflatten(&y.as_slice()[..n * n], n, n);
            let psi = unflatten(&y.as_slice()[n * n..], n, n);
            let p = spd_inverse(&sigma.eval(s)).unwrap_or_else(|| DMatrix::from_element(n, n, f64::NAN));
            let a = sys.a(s);
            let closed = &a - sys.b(s) * sys.r_inv_bt(s) * p;
            let dphi = closed * &phi;
            let dpsi = -(a.transpose() * psi) - sys.q(s) * phi;
            let mut out = DVector::zeros(2 * n * n);
            out.rows_mut(0, n * n).copy_from(&flatten(&dphi));
            out.rows_mut(n * n, n * n).copy_from(&flatten(&dpsi));
            out
        },
        sigma.t_lo,
        y0,
        split,
        &breaks,
        &opts.ode(),
        None,
    )?;

    let psi_split = forward.final_state().rows(n * n, n * n).into_owned();
    let tail_breaks: Vec<f64> = sys.breakpoints().iter().copied().filter(|&b| b > split).collect();
    let tail = integrate(
        |s, y| {
            let psi = unflatten(y.as_slice(), n, n);
            let gen = sys.a(s).transpose() + sys.q(s) * sigma.eval(s);
            flatten(&-(gen * psi))
        },
        split,
        psi_split,
        t_hi,
        &tail_breaks,
        &opts.ode(),
        None,
    )?;
    Ok(Flows {
        forward,
        tail,
        sigma: sigma.clone(),
        split,
        n,
    })
}

/// `Φ' = (A − BR⁻¹BᵀP)Φ`, `Φ(0) = I` and `Ψ' = −AᵀΨ − QΦ`, `Ψ(0) = P(0)`.
pub fn solve_flows(
    spec: &ProblemSpec,
    lam: &LambdaWeights,
    sigma: &SigmaSolution,
    opts: &SolverOptions,
) -> Result<Flows> {
    let sys = LqSystem::from_spec(spec, lam)?;
    let eps_t = opts.standoff(spec.t0(), spec.horizon());
    let split = feedback_end(sigma, spec.t0(), eps_t, opts)?;
    solve_flows_system(&sys, sigma, split, opts)
}

/// `Π(s) = Σ̄(T + t0 − s)⁻¹` from the reversed system, for `s ≥ t0 + eps`.
#[derive(Debug, Clone)]
pub struct PiSolution {
    sigma_bar: SigmaSolution,
    t0: f64,
    horizon: f64,
    eps: f64,
    cond_max: f64,
}

impl PiSolution {
    pub fn eval(&self, s: f64) -> Result<DMatrix<f64>> {
        let limit = self.t0 + self.eps;
        if s < limit - 1e-14 * self.horizon.abs().max(1.0) {
            return Err(ClqError::StandoffViolation { s, limit });
        }
        let r = self.horizon + self.t0 - s;
        invert_checked(&self.sigma_bar.eval(r), s, self.cond_max)
    }

    pub fn at_horizon(&self) -> Result<DMatrix<f64>> {
        self.eval(self.horizon)
    }
}

pub(crate) fn solve_pi_system(sys: &LqSystem, t0: f64, horizon: f64, opts: &SolverOptions) -> Result<PiSolution> {
    let reversed = sys.reversed(horizon + t0);
    let sigma_bar = solve_sigma_system(&reversed, t0, horizon, opts)?;
    Ok(PiSolution {
        sigma_bar,
        t0,
        horizon,
        eps: opts.standoff(t0, horizon),
        cond_max: opts.cond_max,
    })
}

pub fn solve_pi(spec: &ProblemSpec, lam: &LambdaWeights, t0: f64, opts: &SolverOptions) -> Result<PiSolution> {
    if !(t0 < spec.horizon()) {
        return Err(ClqError::InvalidSpec(format!("t0={t0} must precede T")));
    }
    let sys = LqSystem::from_spec(spec, lam)?;
    solve_pi_system(&sys, t0, spec.horizon(), opts)
}

/// Everything needed for the λ-weighted problem: `Σ`, `P`, `Φ`, `Ψ`, `Π`.
#[derive(Debug, Clone)]
pub struct RiccatiBundle {
    pub lam: LambdaWeights,
    pub t0: f64,
    pub eps_t: f64,
    horizon: f64,
    cond_max: f64,
    feedback_end: f64,
    system: LqSystem,
    sigma: SigmaSolution,
    flows: Flows,
    pi: PiSolution,
}

impl RiccatiBundle {
    pub fn solve(spec: &ProblemSpec, lam: &LambdaWeights, opts: &SolverOptions) -> Result<Self> {
        let system = LqSystem::from_spec(spec, lam)?;
        let horizon = spec.horizon();
        let eps_t = opts.standoff(spec.t0(), horizon);
        let sigma = solve_sigma_system(&system, 0.0, horizon, opts)?;
        let feedback_end = feedback_end(&sigma, spec.t0(), eps_t, opts)?;
        let flows = solve_flows_system(&system, &sigma, feedback_end, opts)?;
        let pi = solve_pi_system(&system, spec.t0(), horizon, opts)?;
        Ok(Self {
            lam: lam.clone(),
            t0: spec.t0(),
            eps_t,
            horizon,
            cond_max: opts.cond_max,
            feedback_end,
            system,
            sigma,
            flows,
            pi,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// `T - eps_T`, the last time the feedback gain is evaluated.
    pub fn standoff_end(&self) -> f64 {
        self.horizon - self.eps_t
    }

    /// Last time the feedback loop inverts `Σ`; at most `T − eps_T`.
    pub fn feedback_end(&self) -> f64 {
        self.feedback_end
    }

    pub fn system(&self) -> &LqSystem {
        &self.system
    }

    pub fn sigma(&self, s: f64) -> DMatrix<f64> {
        self.sigma.eval(s)
    }

    pub fn sigma_solution(&self) -> &SigmaSolution {
        &self.sigma
    }

    pub fn p(&self, s: f64) -> Result<DMatrix<f64>> {
        recover_p(&self.sigma, s, self.eps_t, self.cond_max)
    }

    pub fn phi(&self, s: f64) -> DMatrix<f64> {
        self.flows.phi(s)
    }

    pub fn psi(&self, s: f64) -> DMatrix<f64> {
        self.flows.psi(s)
    }

    pub fn pi(&self, s: f64) -> Result<DMatrix<f64>> {
        self.pi.eval(s)
    }

    pub fn flows(&self) -> &Flows {
        &self.flows
    }

    /// `Ψ(T)`.
    pub fn psi_terminal(&self) -> DMatrix<f64> {
        self.flows.psi(self.horizon)
    }
}

/// `η(s) = −[Ψ(T)Φ(s)⁻¹]ᵀ y`, evaluated by linear solves against `Φ(s)ᵀ`.
#[derive(Debug, Clone)]
pub struct EtaProfile<'a> {
    bundle: &'a RiccatiBundle,
    /// `Ψ(T)ᵀ y`
    rhs: DVector<f64>,
}

impl EtaProfile<'_> {
    pub fn eval(&self, s: f64) -> Result<DVector<f64>> {
        eta_from_rhs(self.bundle, &self.rhs, s)
    }
}

/// `η(s)` given `Ψ(T)ᵀy`.
pub(crate) fn eta_from_rhs(bundle: &RiccatiBundle, rhs: &DVector<f64>, s: f64) -> Result<DVector<f64>> {
    let limit = bundle.standoff_end();
    if s > limit + 1e-14 * bundle.horizon.max(1.0) {
        return Err(ClqError::StandoffViolation { s, limit });
    }
    if rhs.iter().all(|v| *v == 0.0) {
        return Ok(DVector::zeros(rhs.len()));
    }
    let z = bundle
        .phi(s)
        .transpose()
        .lu()
        .solve(rhs)
        .ok_or(ClqError::IllConditioned { s, cond: f64::INFINITY })?;
    Ok(-z)
}

pub fn eta_profile<'a>(bundle: &'a RiccatiBundle, y: &DVector<f64>) -> EtaProfile<'a> {
    EtaProfile {
        bundle,
        rhs: bundle.psi_terminal().transpose() * y,
    }
}

/// `w(s) = −Σ(s)η(s)`: the state the loop is heading for at `s`.
///
/// Unlike `η` it is regular up to `T`, solving `w' = (A + ΣQ)w`, `w(T) = y`,
/// so the feedback `u = −R⁻¹BᵀΣ⁻¹(X − w)` never forms the large, nearly
/// cancelling terms `PX` and `η` separately.
#[derive(Debug, Clone)]
pub struct TargetProfile {
    dense: Option<DenseSolution>,
    n: usize,
}

impl TargetProfile {
    pub fn eval(&self, s: f64) -> DVector<f64> {
        match &self.dense {
            Some(d) => d.eval(s),
            None => DVector::zeros(self.n),
        }
    }
}

pub fn target_profile(bundle: &RiccatiBundle, y: &DVector<f64>, opts: &SolverOptions) -> Result<TargetProfile> {
    let n = y.len();
    if y.iter().all(|v| *v == 0.0) {
        return Ok(TargetProfile { dense: None, n });
    }
    let sys = &bundle.system;
    let sigma = &bundle.sigma;
    let dense = integrate(
        |s, w| (sys.a(s) + sigma.eval(s) * sys.q(s)) * w,
        bundle.horizon,
        y.clone(),
        bundle.t0,
        sys.breakpoints(),
        &opts.ode(),
        None,
    )?;
    Ok(TargetProfile { dense: Some(dense), n })
}

/// Penalized problem with terminal cost `i·|X(T) − y|²`.
#[derive(Debug, Clone)]
pub struct PenalizedBundle {
    pub weight: f64,
    /// `[P_i (n²), η_i (n), ξ_i (1)]` integrated backward from `T`.
    backward: DenseSolution,
    /// `Φ_i` from `Φ_i(0) = I`.
    phi: DenseSolution,
    n: usize,
    horizon: f64,
}

impl PenalizedBundle {
    pub fn p(&self, s: f64) -> DMatrix<f64> {
        let n = self.n;
        symmetrized(unflatten(&self.backward.eval(s).as_slice()[..n * n], n, n))
    }

    pub fn eta(&self, s: f64) -> DVector<f64> {
        let n = self.n;
        self.backward.eval(s).rows(n * n, n).into_owned()
    }

    /// `i|y|² − ∫_s^T ⟨R⁻¹Bᵀη_i, Bᵀη_i⟩ dr`.
    pub fn offset(&self, s: f64) -> f64 {
        let n = self.n;
        self.backward.eval(s)[n * n + n]
    }

    pub fn phi(&self, s: f64) -> DMatrix<f64> {
        unflatten(self.phi.eval(s).as_slice(), self.n, self.n)
    }

    pub fn phi_terminal(&self) -> DMatrix<f64> {
        self.phi(self.horizon)
    }

    /// `V_i(t, x, y) = ⟨P_i(t)x, x⟩ + 2⟨η_i(t), x⟩ + i|y|² − ∫_t^T ⟨R⁻¹Bᵀη_i, Bᵀη_i⟩`.
    pub fn value(&self, t: f64, x: &DVector<f64>) -> f64 {
        x.dot(&(self.p(t) * x)) + 2.0 * self.eta(t).dot(x) + self.offset(t)
    }
}

pub(crate) fn solve_penalized_system(
    sys: &LqSystem,
    horizon: f64,
    weight: f64,
    y: &DVector<f64>,
    opts: &SolverOptions,
) -> Result<PenalizedBundle> {
    if !(weight >= 1.0 && weight.is_finite()) {
        return Err(ClqError::InvalidSpec(format!("penalty weight must be >= 1, got {weight}")));
    }
    let n = sys.n();
    let len = n * n + n + 1;
    let mut y0 = DVector::zeros(len);
    y0.rows_mut(0, n * n).copy_from(&flatten(&(DMatrix::identity(n, n) * weight)));
    y0.rows_mut(n * n, n).copy_from(&(y * -weight));
    y0[len - 1] = weight * y.norm_squared();
    let sym = symmetrize_flat(n);
    let project = |v: &mut DVector<f64>| {
        let mut head = v.rows(0, n * n).into_owned();
        sym(&mut head);
        v.rows_mut(0, n * n).copy_from(&head);
    };
    let backward = integrate(
        |s, state| {
            let p = unflatten(&state.as_slice()[..n * n], n, n);
            let eta = state.rows(n * n, n).into_owned();
            let a = sys.a(s);
            let b = sys.b(s);
            let rib = sys.r_inv_bt(s);
            let pa = &p * &a;
            let mut dp = -(&pa + pa.transpose() + sys.q(s) - &p * &b * &rib * &p);
            symmetrize(&mut dp);
            let closed = &a - &b * &rib * &p;
            let deta = -(closed.transpose() * &eta);
            let bt_eta = b.transpose() * &eta;
            let dxi = (&rib * &eta).dot(&bt_eta);
            let mut out = DVector::zeros(len);
            out.rows_mut(0, n * n).copy_from(&flatten(&dp));
            out.rows_mut(n * n, n).copy_from(&deta);
            out[len - 1] = dxi;
            out
        },
        horizon,
        y0,
        0.0,
        sys.breakpoints(),
        &opts.ode(),
        Some(&project),
    )?;
    let phi = integrate(
        |s, state| {
            let p = symmetrized(unflatten(&backward.eval(s).as_slice()[..n * n], n, n));
            let closed = sys.a(s) - sys.b(s) * sys.r_inv_bt(s) * p;
            flatten(&(closed * unflatten(state.as_slice(), n, n)))
        },
        0.0,
        flatten(&DMatrix::identity(n, n)),
        horizon,
        sys.breakpoints(),
        &opts.ode(),
        None,
    )?;
    Ok(PenalizedBundle {
        weight,
        backward,
        phi,
        n,
        horizon,
    })
}

/// Penalized Riccati solution `P_i(T) = i·I` with `η_i(T) = −i·y`.
pub fn solve_penalized(
    spec: &ProblemSpec,
    lam: &LambdaWeights,
    weight: f64,
    y: &DVector<f64>,
    opts: &SolverOptions,
) -> Result<PenalizedBundle> {
    let sys = LqSystem::from_spec(spec, lam)?;
    solve_penalized_system(&sys, spec.horizon(), weight, y, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{QuadraticFunctional, TimeGridMatrixFn};

    fn scalar_spec(a: f64, b: f64, q: f64, r: f64, horizon: f64) -> ProblemSpec {
        let c = |v: f64| TimeGridMatrixFn::constant(DMatrix::from_element(1, 1, v), horizon);
        ProblemSpec::new(
            c(a),
            c(b),
            0.0,
            horizon,
            DVector::from_element(1, 1.0),
            DVector::zeros(1),
            QuadraticFunctional::cost(c(q), c(r)),
            vec![],
        )
        .unwrap()
    }

    fn none() -> LambdaWeights {
        LambdaWeights::zeros(0)
    }

    #[test]
    fn example_one_sigma_closed_form() {
        let spec = scalar_spec(1.0, 1.0, 0.0, 1.0, 1.0);
        let sigma = solve_sigma(&spec, &none(), &SolverOptions::default()).unwrap();
        for k in 0..=40 {
            let s = k as f64 / 40.0;
            let exact = (1.0 - (2.0 * (s - 1.0_f64)).exp()) / 2.0;
            assert!((sigma.eval(s)[(0, 0)] - exact).abs() < 1e-10, "s={s}");
        }
        assert_eq!(sigma.eval(1.0)[(0, 0)], 0.0);
    }

    #[test]
    fn pure_integrator_sigma_is_linear() {
        let eye = |v: f64| TimeGridMatrixFn::constant(DMatrix::identity(2, 2) * v, 2.0);
        let spec = ProblemSpec::new(
            eye(0.0),
            eye(1.0),
            0.0,
            2.0,
            DVector::zeros(2),
            DVector::zeros(2),
            QuadraticFunctional::cost(eye(0.0), eye(1.0)),
            vec![],
        )
        .unwrap();
        let sigma = solve_sigma(&spec, &none(), &SolverOptions::default()).unwrap();
        for s in [0.0, 0.5, 1.3, 1.99] {
            let expect = DMatrix::identity(2, 2) * (2.0 - s);
            assert!((sigma.eval(s) - expect).abs().max() < 1e-12);
        }
    }

    #[test]
    fn example_two_unweighted_p_at_zero() {
        let spec = scalar_spec(1.0, 1.0, 15.0, 1.0, 1.0);
        let opts = SolverOptions::default();
        let sigma = solve_sigma(&spec, &none(), &opts).unwrap();
        let p0 = recover_p(&sigma, 0.0, 1e-3, opts.cond_max).unwrap();
        let exact = 5.0 + 8.0 / (8.0f64.exp() - 1.0);
        assert!((p0[(0, 0)] - exact).abs() < 1e-8, "{} vs {exact}", p0[(0, 0)]);
    }

    #[test]
    fn recover_p_cases() {
        let spec = scalar_spec(1.0, 1.0, 0.0, 1.0, 1.0);
        let opts = SolverOptions::default();
        let sigma = solve_sigma(&spec, &none(), &opts).unwrap();
        let p0 = recover_p(&sigma, 0.0, 1e-3, opts.cond_max).unwrap();
        assert!((p0[(0, 0)] - 2.0 / (1.0 - (-2.0f64).exp())).abs() < 1e-9);
        assert!(matches!(
            recover_p(&sigma, 0.9995, 1e-3, opts.cond_max),
            Err(ClqError::StandoffViolation { .. })
        ));

        let spec = scalar_spec(0.0, 1.0, 0.0, 1.0, 1.0);
        let sigma = solve_sigma(&spec, &none(), &opts).unwrap();
        let p = recover_p(&sigma, 0.9, 1e-3, opts.cond_max).unwrap();
        assert!((p[(0, 0)] - 10.0).abs() < 1e-9);
    }

    #[test]
    fn sigma_near_terminal_time_matches_asymptotic() {
        let spec = scalar_spec(1.0, 1.0, 3.0, 2.0, 1.0);
        let sigma = solve_sigma(&spec, &none(), &SolverOptions::default()).unwrap();
        for h in [1e-2, 1e-3] {
            let approx = sigma_asymptotic(&spec, &none(), 1.0 - h).unwrap();
            // Σ(T-h) = h·BR⁻¹Bᵀ + O(h²)
            assert!((sigma.eval(1.0 - h) - approx).abs().max() < 2.0 * h * h);
        }
    }

    #[test]
    fn uncontrollable_system_breaks_sigma() {
        let spec = scalar_spec(1.0, 0.0, 0.0, 1.0, 1.0);
        let opts = SolverOptions::default();
        let sigma = solve_sigma(&spec, &none(), &opts).unwrap();
        assert!(matches!(
            recover_p(&sigma, 0.0, 1e-3, opts.cond_max),
            Err(ClqError::IllConditioned { .. })
        ));
    }

    #[test]
    fn example_one_flows() {
        let spec = scalar_spec(1.0, 1.0, 0.0, 1.0, 1.0);
        let b = RiccatiBundle::solve(&spec, &none(), &SolverOptions::default()).unwrap();
        let e = std::f64::consts::E;
        let d = e * e - 1.0;
        for k in 0..=20 {
            let s = 0.99 * k as f64 / 20.0;
            let phi = ((2.0 - s).exp() - s.exp()) / d;
            let psi = 2.0 * (2.0 - s).exp() / d;
            assert!((b.phi(s)[(0, 0)] - phi).abs() < 1e-8 * phi.abs().max(1e-3));
            assert!((b.psi(s)[(0, 0)] - psi).abs() < 1e-8);
        }
        assert_eq!(b.phi(1.0)[(0, 0)], 0.0);
        assert!((b.psi_terminal()[(0, 0)] - 2.0 * e / d).abs() < 1e-8);
    }

    #[test]
    fn pure_integrator_flows_and_pi() {
        let spec = scalar_spec(0.0, 1.0, 0.0, 1.0, 1.0);
        let b = RiccatiBundle::solve(&spec, &none(), &SolverOptions::default()).unwrap();
        for s in [0.0, 0.3, 0.8, 0.99] {
            assert!((b.phi(s)[(0, 0)] - (1.0 - s)).abs() < 1e-9);
            assert!((b.psi(s)[(0, 0)] - 1.0).abs() < 1e-9);
            if s > 0.0 {
                assert!((b.pi(s).unwrap()[(0, 0)] - 1.0 / s).abs() < 1e-8 / s);
            }
        }
        assert!(matches!(b.pi(0.0), Err(ClqError::StandoffViolation { .. })));
    }

    #[test]
    fn example_one_pi() {
        let spec = scalar_spec(1.0, 1.0, 0.0, 1.0, 1.0);
        let pi = solve_pi(&spec, &none(), 0.0, &SolverOptions::default()).unwrap();
        for s in [0.01_f64, 0.2, 0.5, 1.0] {
            let exact = 2.0 / ((2.0 * s).exp() - 1.0);
            assert!((pi.eval(s).unwrap()[(0, 0)] - exact).abs() < 1e-8 * exact);
        }
    }

    #[test]
    fn reversed_and_forward_agree_for_symmetric_case() {
        // A=0: Π(T) and P(t0) are both 1/(T - t0)
        let spec = scalar_spec(0.0, 1.0, 0.0, 1.0, 1.5);
        let b = RiccatiBundle::solve(&spec, &none(), &SolverOptions::default()).unwrap();
        let p = b.p(0.0).unwrap()[(0, 0)];
        let pi = b.pi(1.5).unwrap()[(0, 0)];
        assert!((p - pi).abs() < 1e-10);
        assert!((p - 1.0 / 1.5).abs() < 1e-10);
    }

    #[test]
    fn penalized_pure_integrator() {
        let spec = scalar_spec(0.0, 1.0, 0.0, 1.0, 1.0);
        let pb = solve_penalized(&spec, &none(), 1.0, &DVector::zeros(1), &SolverOptions::default()).unwrap();
        assert!((pb.p(0.0)[(0, 0)] - 0.5).abs() < 1e-8);
        assert_eq!(pb.p(1.0)[(0, 0)], 1.0);
    }

    #[test]
    fn penalized_zero_target_has_no_offset() {
        let spec = scalar_spec(1.0, 1.0, 2.0, 1.0, 1.0);
        let pb = solve_penalized(&spec, &none(), 10.0, &DVector::zeros(1), &SolverOptions::default()).unwrap();
        for s in [0.0, 0.5, 1.0] {
            assert_eq!(pb.eta(s)[0], 0.0);
            assert_eq!(pb.offset(s), 0.0);
        }
        let x = DVector::from_element(1, 1.7);
        assert_eq!(pb.value(0.0, &x), x.dot(&(pb.p(0.0) * &x)));
    }

    #[test]
    fn penalized_terminal_conditions() {
        let spec = scalar_spec(1.0, 1.0, 0.0, 1.0, 1.0);
        let y = DVector::from_element(1, 0.5);
        let pb = solve_penalized(&spec, &none(), 7.0, &y, &SolverOptions::default()).unwrap();
        assert_eq!(pb.p(1.0)[(0, 0)], 7.0);
        assert_eq!(pb.eta(1.0)[0], -3.5);
        assert!(solve_penalized(&spec, &none(), 0.5, &y, &SolverOptions::default()).is_err());
    }

    #[test]
    fn eta_vanishes_for_zero_target() {
        let spec = scalar_spec(1.0, 1.0, 0.0, 1.0, 1.0);
        let b = RiccatiBundle::solve(&spec, &none(), &SolverOptions::default()).unwrap();
        let eta = eta_profile(&b, &DVector::zeros(1));
        assert_eq!(eta.eval(0.4).unwrap()[0], 0.0);
        assert!(eta.eval(0.99999).is_err());
    }

    #[test]
    fn example_one_eta() {
        let spec = scalar_spec(1.0, 1.0, 0.0, 1.0, 1.0);
        let b = RiccatiBundle::solve(&spec, &none(), &SolverOptions::default()).unwrap();
        let y = DVector::from_element(1, 1.3);
        let eta = eta_profile(&b, &y);
        let e = std::f64::consts::E;
        for s in [0.0, 0.25, 0.5, 0.9, 0.99] {
            let s: f64 = s;
            let exact = -2.0 * e * 1.3 / ((2.0 - s).exp() - s.exp());
            let got = eta.eval(s).unwrap()[0];
            assert!((got - exact).abs() < 1e-7 * exact.abs(), "s={s}: {got} vs {exact}");
        }
    }
}
