//! Direct transcription: an independent check of the Riccati path.
//!
//! The control is piecewise constant on `N` uniform intervals. On each
//! interval the integrator produces the exact transition `X_{j+1} =
//! A_j X_j + B_j u_j` and the exact quadratic cost of the segment, so every
//! functional becomes `uᵀHu + 2gᵀu + c` and the terminal condition becomes
//! `Gu = r`. The only approximation is the control parameterization, which
//! converges at second order.

use std::ops::AddAssign;

use nalgebra::{DMatrix, DVector};

use crate::dual::{ascend, AscentOptions, DualObjective};
use crate::error::{ClqError, Result};
use crate::linalg::{flatten, symmetrize, unflatten};
use crate::model::ProblemSpec;
use crate::ode::integrate;
use crate::options::SolverOptions;
use crate::par::{self, Execution};

/// `J(u) = uᵀHu + 2gᵀu + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticForm {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub c: f64,
}

impl QuadraticForm {
    pub fn eval(&self, u: &DVector<f64>) -> f64 {
        u.dot(&(&self.h * u)) + 2.0 * self.g.dot(u) + self.c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transcription {
    pub n_intervals: usize,
    pub n: usize,
    pub m: usize,
    /// `N + 1` uniform nodes on `[t0, T]`.
    pub times: Vec<f64>,
    /// Cost first, then one form per constraint.
    pub functionals: Vec<QuadraticForm>,
    pub g_map: DMatrix<f64>,
    /// `y` minus the free response at `T`.
    pub r: DVector<f64>,
    pub bounds: Vec<f64>,
}

/// Exact per-interval data.
struct Interval {
    ad: DMatrix<f64>,
    bd: DMatrix<f64>,
    /// `∫ Mᵀ diag(Q_i, R_i) M` over the interval, one per functional, where
    /// `M` maps `(X_j, u_j)` to `(X(s), u_j)`.
    cost: Vec<DMatrix<f64>>,
}

fn discretize(spec: &ProblemSpec, lo: f64, hi: f64, opts: &SolverOptions) -> Result<Interval> {
    let (n, m) = (spec.n(), spec.m());
    let w = n + m;
    let funs: Vec<_> = spec.functionals().collect();
    let nf = funs.len();
    let mut y0 = DVector::zeros(n * w + nf * w * w);
    y0.rows_mut(0, n * w)
        .copy_from(&flatten(&DMatrix::identity(n, w)));
    let breaks: Vec<f64> = spec.breakpoints().into_iter().filter(|&b| b > lo && b < hi).collect();
    let sol = integrate(
        |s, y| {
            let top = unflatten(&y.as_slice()[..n * w], n, w);
            let mut dtop = spec.a().eval(s) * &top;
            dtop.columns_mut(n, m).add_assign(&spec.b().eval(s));
            let mut out = DVector::zeros(y.len());
            out.rows_mut(0, n * w).copy_from(&flatten(&dtop));
            for (i, f) in funs.iter().enumerate() {
                let mut dc = top.transpose() * f.q.eval(s) * &top;
                let mut view = dc.view_mut((n, n), (m, m));
                view += f.r.eval(s);
                symmetrize(&mut dc);
                out.rows_mut(n * w + i * w * w, w * w).copy_from(&flatten(&dc));
            }
            out
        },
        lo,
        y0,
        hi,
        &breaks,
        &opts.ode(),
        None,
    )?;
    let end = sol.final_state();
    let top = unflatten(&end.as_slice()[..n * w], n, w);
    let cost = (0..nf)
        .map(|i| unflatten(&end.as_slice()[n * w + i * w * w..n * w + (i + 1) * w * w], w, w))
        .collect();
    Ok(Interval {
        ad: top.columns(0, n).into_owned(),
        bd: top.columns(n, m).into_owned(),
        cost,
    })
}

/// Condenses one functional over the interval data (backward sweeps).
fn condense(ints: &[Interval], free: &[DVector<f64>], idx: usize, n: usize, m: usize, exec: Execution) -> QuadraticForm {
    let big_n = ints.len();
    let cxx = |t: usize| ints[t].cost[idx].view((0, 0), (n, n)).into_owned();
    let cxu = |t: usize| ints[t].cost[idx].view((0, n), (n, m)).into_owned();
    let cuu = |t: usize| ints[t].cost[idx].view((n, n), (m, m)).into_owned();

    // S_t = Cxx_t + Ad_tᵀ S_{t+1} Ad_t, S_N = 0
    let mut s = vec![DMatrix::zeros(n, n); big_n + 1];
    let mut h = vec![DVector::zeros(n); big_n + 1];
    for t in (0..big_n).rev() {
        let ad = &ints[t].ad;
        let mut st = cxx(t) + ad.transpose() * &s[t + 1] * ad;
        symmetrize(&mut st);
        s[t] = st;
        h[t] = cxx(t) * &free[t] + ad.transpose() * &h[t + 1];
    }

    // Column p of the upper triangle: H[q,p] = Bd_qᵀ (Ad_{q+1}ᵀ ⋯ Ad_{p-1}ᵀ) Y_p
    let columns = par::map_range(exec, big_n, |p| {
        let bd = &ints[p].bd;
        let y = ints[p].ad.transpose() * &s[p + 1] * bd + cxu(p);
        let mut blocks = Vec::with_capacity(p + 1);
        let mut diag = cuu(p) + bd.transpose() * &s[p + 1] * bd;
        symmetrize(&mut diag);
        blocks.push(diag);
        let mut z = y;
        for q in (0..p).rev() {
            blocks.push(ints[q].bd.transpose() * &z);
            z = ints[q].ad.transpose() * z;
        }
        blocks
    });

    let dim = m * big_n;
    let mut hm = DMatrix::zeros(dim, dim);
    for (p, blocks) in columns.iter().enumerate() {
        hm.view_mut((p * m, p * m), (m, m)).copy_from(&blocks[0]);
        for (offset, block) in blocks.iter().enumerate().skip(1) {
            let q = p - offset;
            hm.view_mut((q * m, p * m), (m, m)).copy_from(block);
            hm.view_mut((p * m, q * m), (m, m)).copy_from(&block.transpose());
        }
    }
    let mut g = DVector::zeros(dim);
    let mut c = 0.0;
    for q in 0..big_n {
        let gq = ints[q].bd.transpose() * &h[q + 1] + cxu(q).transpose() * &free[q];
        g.rows_mut(q * m, m).copy_from(&gq);
        c += free[q].dot(&(cxx(q) * &free[q]));
    }
    QuadraticForm { h: hm, g, c }
}

/// Transcribes the problem onto `n_intervals` piecewise-constant controls.
pub fn transcribe(spec: &ProblemSpec, n_intervals: usize, opts: &SolverOptions) -> Result<Transcription> {
    let (n, m) = (spec.n(), spec.m());
    if n_intervals == 0 {
        return Err(ClqError::InvalidSpec("oracle needs at least one interval".into()));
    }
    let (t0, t1) = (spec.t0(), spec.horizon());
    let times: Vec<f64> = (0..=n_intervals)
        .map(|j| t0 + (t1 - t0) * j as f64 / n_intervals as f64)
        .collect();
    let ints = par::try_map(opts.execution, &times[..n_intervals], |&lo| {
        let j = ((lo - t0) / (t1 - t0) * n_intervals as f64).round() as usize;
        discretize(spec, lo, times[j + 1], opts)
    })?;

    let mut free = Vec::with_capacity(n_intervals + 1);
    free.push(spec.x().clone());
    for int in &ints {
        let next = &int.ad * free.last().unwrap();
        free.push(next);
    }

    let mut g_map = DMatrix::zeros(n, m * n_intervals);
    let mut prod = DMatrix::identity(n, n);
    for p in (0..n_intervals).rev() {
        g_map.view_mut((0, p * m), (n, m)).copy_from(&(&prod * &ints[p].bd));
        prod *= &ints[p].ad;
    }
    let r = spec.y() - &free[n_intervals];
    let nf = spec.k() + 1;
    let functionals = par::map_range(opts.execution, nf, |i| condense(&ints, &free, i, n, m, opts.execution));
    Ok(Transcription {
        n_intervals,
        n,
        m,
        times,
        functionals,
        g_map,
        r,
        bounds: spec.bounds(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    /// Stacked controls `u_0, …, u_{N−1}`.
    pub u: DVector<f64>,
    /// Objective `J_0 + Σ λ_i J_i` at `u`.
    pub value: f64,
    /// `J_0, J_1, …` at `u`.
    pub functionals: Vec<f64>,
    /// `|Gu − r|`
    pub residual: f64,
}

impl Transcription {
    pub fn weighted(&self, lam: &[f64]) -> QuadraticForm {
        let mut out = self.functionals[0].clone();
        for (l, f) in lam.iter().zip(&self.functionals[1..]) {
            if *l != 0.0 {
                out.h += &f.h * *l;
                out.g += &f.g * *l;
                out.c += l * f.c;
            }
        }
        out
    }

    /// Control on interval `j` of a stacked vector.
    pub fn control(&self, u: &DVector<f64>, j: usize) -> DVector<f64> {
        u.rows(j * self.m, self.m).into_owned()
    }
}

/// Minimizes `J_0 + Σ λ_i J_i` subject to `Gu = r`.
///
/// `H` is factored by Cholesky and the terminal constraint is eliminated
/// through the `n × n` Schur complement `G H⁻¹ Gᵀ`.
pub fn solve_equality_qp(tr: &Transcription, lam: &[f64]) -> Result<QpSolution> {
    let form = tr.weighted(lam);
    let chol = form
        .h
        .clone()
        .cholesky()
        .ok_or_else(|| ClqError::SingularKkt("cost Hessian is not positive definite".into()))?;
    let gt = tr.g_map.transpose();
    let h_gt = chol.solve(&gt);
    let h_g = chol.solve(&form.g);
    let mut schur = &tr.g_map * &h_gt;
    symmetrize(&mut schur);
    let svd = schur.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let rank_tol = 1e-12 * smax.max(f64::MIN_POSITIVE);
    let deficient = smax == 0.0 || svd.singular_values.min() <= rank_tol;
    let rhs = &tr.r + &tr.g_map * &h_g;
    let mu = if deficient {
        svd.solve(&rhs, rank_tol).map_err(|e| ClqError::SingularKkt(e.to_string()))?
    } else {
        schur.clone().cholesky().map(|c| c.solve(&rhs)).unwrap_or_else(|| svd.solve(&rhs, rank_tol).unwrap())
    };
    // u = −H⁻¹(g − Gᵀμ) with μ = S⁻¹(r + GH⁻¹g)
    let mut u = &h_gt * &mu - &h_g;
    // one step of refinement on the terminal residual
    if !deficient {
        let e = &tr.r - &tr.g_map * &u;
        if let Some(c) = schur.clone().cholesky() {
            u += &h_gt * c.solve(&e);
        }
    }
    let residual = (&tr.g_map * &u - &tr.r).norm();
    if deficient {
        let scale = 1.0 + tr.r.norm();
        if residual > 1e-8 * scale {
            return Err(ClqError::InfeasibleQp(format!(
                "terminal target unreachable on the grid (residual {residual:.3e})"
            )));
        }
        return Err(ClqError::SingularKkt(format!(
            "terminal map is rank deficient (smallest singular value of G H⁻¹ Gᵀ {:.3e})",
            svd.singular_values.min()
        )));
    }
    let functionals = tr.functionals.iter().map(|f| f.eval(&u)).collect();
    Ok(QpSolution {
        value: form.eval(&u),
        u,
        functionals,
        residual,
    })
}

/// Dual of the transcribed constrained problem.
struct OracleDual<'a> {
    tr: &'a Transcription,
}

impl OracleDual<'_> {
    fn lagrangian(&self, lam: &[f64], qp: &QpSolution) -> f64 {
        qp.value - lam.iter().zip(&self.tr.bounds).map(|(l, c)| l * c).sum::<f64>()
    }
}

impl DualObjective for OracleDual<'_> {
    fn dim(&self) -> usize {
        self.tr.bounds.len()
    }

    fn phi(&self, lam: &[f64]) -> Result<f64> {
        let qp = solve_equality_qp(self.tr, lam)?;
        Ok(self.lagrangian(lam, &qp))
    }

    fn grad(&self, lam: &[f64]) -> Result<Vec<f64>> {
        let qp = solve_equality_qp(self.tr, lam)?;
        Ok(qp.functionals[1..].iter().zip(&self.tr.bounds).map(|(j, c)| j - c).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstrainedSolution {
    pub qp: QpSolution,
    pub lam_star: Vec<f64>,
    /// `φ(λ*)`
    pub dual_value: f64,
}

impl ConstrainedSolution {
    /// Weighted objective at `λ*`, comparable to the Riccati value at `λ*`.
    pub fn value(&self) -> f64 {
        self.qp.value
    }
}

/// Constrained transcribed problem via the same dual ascent as the
/// continuous path. A diverging dual means no grid control meets the
/// budgets.
pub fn solve_constrained(tr: &Transcription, opts: &SolverOptions) -> Result<ConstrainedSolution> {
    let obj = OracleDual { tr };
    let zeros = vec![0.0; tr.bounds.len()];
    let ascent = ascend(&obj, &zeros, &AscentOptions::from_solver(opts, &tr.bounds)).map_err(|e| match e {
        ClqError::UnboundedDual { lambda, phi } => ClqError::InfeasibleQp(format!(
            "dual diverges along lambda={lambda:?} (phi={phi:.3e})"
        )),
        other => other,
    })?;
    let qp = solve_equality_qp(tr, &ascent.lam)?;
    Ok(ConstrainedSolution {
        dual_value: obj.lagrangian(&ascent.lam, &qp),
        qp,
        lam_star: ascent.lam,
    })
}
