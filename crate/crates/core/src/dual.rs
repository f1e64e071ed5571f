//! Dual ascent over `λ ≥ 0` and certification of the resulting primal.
//!
//! `φ(λ)` is concave and its gradient is `J_i(u*(λ)) − c_i` because the
//! inner minimizer is unique. One constraint is handled by golden-section
//! search on a doubling bracket; several by projected gradient ascent with
//! Barzilai–Borwein trial steps and Armijo backtracking. The same ascent
//! drives the transcription oracle.

use std::io::{self, Write};

use nalgebra::DVector;

use crate::error::{ClqError, Result};
use crate::model::{LambdaWeights, ProblemSpec};
use crate::options::SolverOptions;
use crate::par::{self, Execution};
use crate::synthesis::{dual_value, solve_weighted};
use crate::trajectory::Trajectory;

const ARMIJO: f64 = 1e-4;
const SHRINK: f64 = 0.5;
const INITIAL_BRACKET: f64 = 64.0;
const INV_GOLDEN: f64 = 0.618_033_988_749_894_9;

/// A concave function of `λ ∈ R^k_+` with a gradient oracle.
pub trait DualObjective: Sync {
    fn dim(&self) -> usize;
    fn phi(&self, lam: &[f64]) -> Result<f64>;
    fn grad(&self, lam: &[f64]) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AscentOptions {
    /// Projected gradient tolerance (absolute).
    pub tol: f64,
    /// Bracket width at which golden-section search stops.
    pub lam_tol: f64,
    pub max_iter: usize,
    /// `φ > dual_cap·(1 + |φ(λ0)|)` is taken as divergence.
    pub dual_cap: f64,
}

impl AscentOptions {
    pub fn from_solver(opts: &SolverOptions, bounds: &[f64]) -> Self {
        let scale = 1.0 + bounds.iter().fold(0.0f64, |a, c| a.max(c.abs()));
        Self {
            tol: opts.dual_tol * scale,
            lam_tol: 1e-8,
            max_iter: opts.max_iter,
            dual_cap: opts.dual_cap,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub lam: Vec<f64>,
    pub phi: f64,
    /// Projected gradient norm; for golden-section steps the secant slope
    /// across the interior probes.
    pub grad_norm: f64,
    /// Accepted step length, or the bracket width for golden section.
    pub step: f64,
}

/// Writes `iter,lambda_1..lambda_k,phi,grad_norm,step`.
pub fn write_trace_csv<W: Write>(rows: &[TraceRow], k: usize, mut w: W) -> io::Result<()> {
    let mut header = vec!["iter".to_string()];
    header.extend((1..=k).map(|i| format!("lambda_{i}")));
    header.extend(["phi", "grad_norm", "step"].map(String::from));
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        let mut cols = vec![row.iter.to_string()];
        cols.extend(row.lam.iter().map(|v| v.to_string()));
        cols.extend([row.phi, row.grad_norm, row.step].map(|v| v.to_string()));
        writeln!(w, "{}", cols.join(","))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ascent {
    pub lam: Vec<f64>,
    pub phi: f64,
    pub iterations: usize,
    pub trace: Vec<TraceRow>,
    /// The line search could not improve `φ` before the gradient test
    /// passed; the point is stationary up to evaluation noise.
    pub stalled: bool,
}

fn projected_norm(lam: &[f64], grad: &[f64]) -> f64 {
    lam.iter()
        .zip(grad)
        .map(|(&l, &g)| if l > 0.0 { g } else { g.max(0.0) })
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt()
}

fn check_cap(lam: &[f64], phi: f64, cap: f64) -> Result<()> {
    if phi > cap {
        return Err(ClqError::UnboundedDual {
            lambda: lam.to_vec(),
            phi,
        });
    }
    Ok(())
}

/// Maximizes `obj` over the nonnegative orthant starting from `lam0`.
pub fn ascend<D: DualObjective + ?Sized>(obj: &D, lam0: &[f64], opts: &AscentOptions) -> Result<Ascent> {
    let k = obj.dim();
    if k == 0 {
        let phi = obj.phi(&[])?;
        return Ok(Ascent {
            lam: vec![],
            phi,
            iterations: 0,
            trace: vec![TraceRow {
                iter: 0,
                lam: vec![],
                phi,
                grad_norm: 0.0,
                step: 0.0,
            }],
            stalled: false,
        });
    }
    if lam0.len() != k {
        return Err(ClqError::DimensionMismatch(format!(
            "initial multiplier has {} entries, expected {k}",
            lam0.len()
        )));
    }
    if k == 1 {
        golden(obj, opts)
    } else {
        projected_gradient(obj, lam0, opts)
    }
}

fn golden<D: DualObjective + ?Sized>(obj: &D, opts: &AscentOptions) -> Result<Ascent> {
    let phi0 = obj.phi(&[0.0])?;
    let g0 = obj.grad(&[0.0])?[0];
    let cap = opts.dual_cap * (1.0 + phi0.abs());
    let mut trace = vec![TraceRow {
        iter: 0,
        lam: vec![0.0],
        phi: phi0,
        grad_norm: g0.max(0.0),
        step: 0.0,
    }];
    if g0 <= 0.0 {
        return Ok(Ascent {
            lam: vec![0.0],
            phi: phi0,
            iterations: 0,
            trace,
            stalled: false,
        });
    }

    let mut iter = 0;
    let mut hi = INITIAL_BRACKET;
    let mut phi_hi = obj.phi(&[hi])?;
    let mut phi_mid = obj.phi(&[hi / 2.0])?;
    // each row records the best point seen so far, so the trace never descends
    let mut best = (0.0, phi0);
    for (l, f) in [(hi / 2.0, phi_mid), (hi, phi_hi)] {
        if f > best.1 {
            best = (l, f);
        }
    }
    while phi_hi >= phi_mid {
        check_cap(&[hi], phi_hi, cap)?;
        iter += 1;
        if iter > opts.max_iter {
            return Err(ClqError::MaxIterExceeded { iterations: iter - 1 });
        }
        trace.push(TraceRow {
            iter,
            lam: vec![best.0],
            phi: best.1,
            grad_norm: 2.0 * (phi_hi - phi_mid) / hi,
            step: hi,
        });
        phi_mid = phi_hi;
        hi *= 2.0;
        phi_hi = obj.phi(&[hi])?;
        if phi_hi > best.1 {
            best = (hi, phi_hi);
        }
    }

    let (mut a, mut b) = (0.0, hi);
    let mut c = b - INV_GOLDEN * (b - a);
    let mut d = a + INV_GOLDEN * (b - a);
    let mut fc = obj.phi(&[c])?;
    let mut fd = obj.phi(&[d])?;
    while b - a > opts.lam_tol * (1.0 + a) {
        iter += 1;
        if iter > opts.max_iter {
            return Err(ClqError::MaxIterExceeded { iterations: iter - 1 });
        }
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_GOLDEN * (b - a);
            fc = obj.phi(&[c])?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_GOLDEN * (b - a);
            fd = obj.phi(&[d])?;
        }
        for (l, f) in [(c, fc), (d, fd)] {
            if f > best.1 {
                best = (l, f);
            }
        }
        trace.push(TraceRow {
            iter,
            lam: vec![best.0],
            phi: best.1,
            grad_norm: ((fd - fc) / (d - c)).abs(),
            step: b - a,
        });
    }
    let mid = 0.5 * (a + b);
    let phi_m = obj.phi(&[mid])?;
    let (lam, phi) = if phi_m >= best.1 { (mid, phi_m) } else { best };
    let slope = trace.last().map_or(0.0, |r| r.grad_norm);
    trace.push(TraceRow {
        iter: iter + 1,
        lam: vec![lam],
        phi,
        grad_norm: slope,
        step: b - a,
    });
    Ok(Ascent {
        lam: vec![lam],
        phi,
        iterations: iter + 1,
        trace,
        stalled: false,
    })
}

fn projected_gradient<D: DualObjective + ?Sized>(obj: &D, lam0: &[f64], opts: &AscentOptions) -> Result<Ascent> {
    let mut lam: Vec<f64> = lam0.iter().map(|v| v.max(0.0)).collect();
    let mut phi = obj.phi(&lam)?;
    let mut grad = obj.grad(&lam)?;
    let cap = opts.dual_cap * (1.0 + phi.abs());
    let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    let mut step = 1.0 / (1.0 + gnorm);
    let mut trace = vec![TraceRow {
        iter: 0,
        lam: lam.clone(),
        phi,
        grad_norm: projected_norm(&lam, &grad),
        step: 0.0,
    }];

    for iter in 1..=opts.max_iter {
        if projected_norm(&lam, &grad) <= opts.tol {
            return Ok(Ascent {
                lam,
                phi,
                iterations: iter - 1,
                trace,
                stalled: false,
            });
        }
        let mut t = step;
        let accepted = loop {
            let cand: Vec<f64> = lam.iter().zip(&grad).map(|(l, g)| (l + t * g).max(0.0)).collect();
            let ascent: f64 = cand.iter().zip(&lam).zip(&grad).map(|((c, l), g)| g * (c - l)).sum();
            let phi_c = obj.phi(&cand)?;
            // strict: a gain lost in rounding is no progress
            if phi_c > phi && phi_c >= phi + ARMIJO * ascent && ascent > 0.0 {
                break Some((cand, phi_c));
            }
            t *= SHRINK;
            if t < 1e-14 * (1.0 + step) {
                break None;
            }
        };
        let Some((cand, phi_c)) = accepted else {
            return Ok(Ascent {
                lam,
                phi,
                iterations: iter,
                trace,
                stalled: true,
            });
        };
        check_cap(&cand, phi_c, cap)?;
        let new_grad = obj.grad(&cand)?;
        // BB step |s|²/(−sᵀy); concavity makes −sᵀy positive unless noise dominates
        let (ss, sy) = cand
            .iter()
            .zip(&lam)
            .zip(new_grad.iter().zip(&grad))
            .fold((0.0, 0.0), |(ss, sy), ((c, l), (gn, g))| {
                let (ds, dy) = (c - l, gn - g);
                (ss + ds * ds, sy + ds * dy)
            });
        step = if sy < 0.0 { (ss / -sy).clamp(1e-10, 1e10) } else { 2.0 * t };
        lam = cand;
        phi = phi_c;
        grad = new_grad;
        trace.push(TraceRow {
            iter,
            lam: lam.clone(),
            phi,
            grad_norm: projected_norm(&lam, &grad),
            step: t,
        });
    }
    if projected_norm(&lam, &grad) <= opts.tol {
        return Ok(Ascent {
            lam,
            phi,
            iterations: opts.max_iter,
            trace,
            stalled: false,
        });
    }
    Err(ClqError::MaxIterExceeded {
        iterations: opts.max_iter,
    })
}

/// Finite-difference gradient of `obj`: central with step `h`, or the
/// second-order forward formula where `λ_i < h` would leave the orthant.
pub fn fd_gradient<D: DualObjective + ?Sized>(obj: &D, lam: &[f64], h: f64, exec: Execution) -> Result<Vec<f64>> {
    let k = lam.len();
    let shifted = |i: usize, delta: f64| {
        let mut l = lam.to_vec();
        l[i] += delta;
        l
    };
    let mut probes = Vec::with_capacity(3 * k);
    for i in 0..k {
        if lam[i] >= h {
            probes.push(shifted(i, h));
            probes.push(shifted(i, -h));
        } else {
            probes.push(lam.to_vec());
            probes.push(shifted(i, h));
            probes.push(shifted(i, 2.0 * h));
        }
    }
    let values = par::try_map(exec, &probes, |l| obj.phi(l))?;
    let mut out = Vec::with_capacity(k);
    let mut idx = 0;
    for &l in lam {
        if l >= h {
            out.push((values[idx] - values[idx + 1]) / (2.0 * h));
            idx += 2;
        } else {
            out.push((-3.0 * values[idx] + 4.0 * values[idx + 1] - values[idx + 2]) / (2.0 * h));
            idx += 3;
        }
    }
    Ok(out)
}

/// `φ` and its gradient for the continuous problem.
#[derive(Debug, Clone, Copy)]
pub struct ContinuousDual<'a> {
    pub spec: &'a ProblemSpec,
    pub opts: &'a SolverOptions,
}

impl DualObjective for ContinuousDual<'_> {
    fn dim(&self) -> usize {
        self.spec.k()
    }

    fn phi(&self, lam: &[f64]) -> Result<f64> {
        dual_value(self.spec, &LambdaWeights::new(lam.to_vec())?, self.opts)
    }

    fn grad(&self, lam: &[f64]) -> Result<Vec<f64>> {
        Ok(dual_gradient(self.spec, &LambdaWeights::new(lam.to_vec())?, self.opts)?
            .iter()
            .copied()
            .collect())
    }
}

/// `(J_i(u*(λ)) − c_i)_i` from the simulated closed loop at `λ`.
pub fn dual_gradient(spec: &ProblemSpec, lam: &LambdaWeights, opts: &SolverOptions) -> Result<DVector<f64>> {
    if spec.k() == 0 {
        return Ok(DVector::zeros(0));
    }
    let (_, traj) = solve_weighted(spec, lam, opts)?;
    Ok(DVector::from_iterator(
        spec.k(),
        traj.functionals.iter().skip(1).zip(spec.bounds()).map(|(j, c)| j - c),
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualResult {
    pub lam_star: LambdaWeights,
    pub dual_value: f64,
    pub primal_traj: Trajectory,
    /// `c_i − J_i(u*)`
    pub slack: Vec<f64>,
    /// Largest violation of primal feasibility or complementary slackness.
    pub kkt_residual: f64,
    pub iterations: usize,
    pub trace: Vec<TraceRow>,
    /// Largest projected gradient norm at `λ* + h·e_i`; small values flag a
    /// flat maximum face where `λ*` is not unique.
    pub neighbor_grad_norm: Option<f64>,
}

/// Maximizes the dual function and simulates the primal control at `λ*`.
pub fn maximize_dual(spec: &ProblemSpec, opts: &SolverOptions, lam0: Option<&[f64]>) -> Result<DualResult> {
    let k = spec.k();
    let bounds = spec.bounds();
    let obj = ContinuousDual { spec, opts };
    let zeros = vec![0.0; k];
    let ascent = ascend(&obj, lam0.unwrap_or(&zeros), &AscentOptions::from_solver(opts, &bounds))?;
    let lam_star = LambdaWeights::new(ascent.lam.clone())?;
    let (_, traj) = solve_weighted(spec, &lam_star, opts)?;
    let slack: Vec<f64> = bounds
        .iter()
        .zip(traj.functionals.iter().skip(1))
        .map(|(c, j)| c - j)
        .collect();
    let kkt_residual = lam_star
        .as_slice()
        .iter()
        .zip(&slack)
        .map(|(l, s)| (-s).max(0.0).max((l * s).abs()))
        .fold(0.0, f64::max);

    let neighbor_grad_norm = if k == 0 {
        None
    } else {
        let probes: Vec<Vec<f64>> = (0..k)
            .map(|i| {
                let mut l = ascent.lam.clone();
                l[i] += 1e-3 * (1.0 + l[i]);
                l
            })
            .collect();
        let norms = par::try_map(opts.execution, &probes, |l| {
            obj.grad(l).map(|g| projected_norm(l, &g))
        })?;
        Some(norms.into_iter().fold(0.0, f64::max))
    };

    Ok(DualResult {
        lam_star,
        dual_value: ascent.phi,
        primal_traj: traj,
        slack,
        kkt_residual,
        iterations: ascent.iterations,
        trace: ascent.trace,
        neighbor_grad_norm,
    })
}

pub const FEAS_TOL: f64 = 1e-3;
pub const CS_TOL: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct CertReport {
    /// `c_i − J_i(u*)`
    pub slack: Vec<f64>,
    /// `λ*_i · slack_i`
    pub cs_residuals: Vec<f64>,
    /// `|J_0(u*) − φ(λ*)|`
    pub gap: f64,
    pub terminal_miss: f64,
    pub feasible: bool,
    pub complementary: bool,
    pub gap_ok: bool,
    pub miss_ok: bool,
}

impl CertReport {
    pub fn passed(&self) -> bool {
        self.feasible && self.complementary && self.gap_ok && self.miss_ok
    }
}

/// Checks primal feasibility, complementary slackness, the duality gap and
/// the terminal miss of a dual solution.
pub fn certify(result: &DualResult, spec: &ProblemSpec, opts: &SolverOptions) -> CertReport {
    let bounds = spec.bounds();
    let cs_residuals: Vec<f64> = result
        .lam_star
        .as_slice()
        .iter()
        .zip(&result.slack)
        .map(|(l, s)| l * s)
        .collect();
    let j0 = result.primal_traj.functionals.first().copied().unwrap_or(0.0);
    let gap = (j0 - result.dual_value).abs();
    CertReport {
        feasible: result.slack.iter().zip(&bounds).all(|(s, c)| *s >= -FEAS_TOL * c),
        complementary: cs_residuals.iter().zip(&bounds).all(|(r, c)| r.abs() <= CS_TOL * (1.0 + c)),
        gap_ok: gap <= opts.sim_tol * (1.0 + result.dual_value.abs()),
        miss_ok: result.primal_traj.terminal_miss <= opts.miss_tol * (1.0 + spec.y().norm()),
        slack: result.slack.clone(),
        cs_residuals,
        gap,
        terminal_miss: result.primal_traj.terminal_miss,
    }
}
