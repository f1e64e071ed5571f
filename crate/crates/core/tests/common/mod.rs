#![allow(dead_code)]

use clq::model::{QuadraticFunctional, TimeGridMatrixFn};
use clq::synthesis::{solve_weighted, value_function};
use clq::{LambdaWeights, ProblemSpec, SolverOptions};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const E: f64 = std::f64::consts::E;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn constant(m: DMatrix<f64>, horizon: f64) -> TimeGridMatrixFn {
    TimeGridMatrixFn::constant(m, horizon)
}

pub fn scalar(v: f64, horizon: f64) -> TimeGridMatrixFn {
    constant(DMatrix::from_element(1, 1, v), horizon)
}

pub fn vec1(v: f64) -> DVector<f64> {
    DVector::from_element(1, v)
}

/// `A = B = 1`, `J_0 = ∫u²`, horizon `[0, 1]`.
pub fn example_one(x: f64, y: f64) -> ProblemSpec {
    let c = |v| scalar(v, 1.0);
    ProblemSpec::new(
        c(1.0),
        c(1.0),
        0.0,
        1.0,
        vec1(x),
        vec1(y),
        QuadraticFunctional::cost(c(0.0), c(1.0)),
        vec![],
    )
    .unwrap()
}

pub fn example_one_energy(x: f64, y: f64) -> f64 {
    2.0 * (E * x - y).powi(2) / (E * E - 1.0)
}

/// `A = B = 1`, `J_0 = ∫15X² + u²`, `∫u² ≤ budget`, steering 1 to 0 on `[0, 1]`.
pub fn example_two_with_budget(budget: f64) -> ProblemSpec {
    let c = |v| scalar(v, 1.0);
    ProblemSpec::new(
        c(1.0),
        c(1.0),
        0.0,
        1.0,
        vec1(1.0),
        vec1(0.0),
        QuadraticFunctional::cost(c(15.0), c(1.0)),
        vec![QuadraticFunctional::constraint(c(0.0), c(1.0), budget)],
    )
    .unwrap()
}

pub fn example_two() -> ProblemSpec {
    example_two_with_budget(3.0)
}

/// Example 2 plus a state budget `∫X² ≤ c2`.
pub fn example_two_pair(c1: f64, c2: f64) -> ProblemSpec {
    let c = |v| scalar(v, 1.0);
    ProblemSpec::new(
        c(1.0),
        c(1.0),
        0.0,
        1.0,
        vec1(1.0),
        vec1(0.0),
        QuadraticFunctional::cost(c(15.0), c(1.0)),
        vec![
            QuadraticFunctional::constraint(c(0.0), c(1.0), c1),
            QuadraticFunctional::constraint(c(1.0), c(0.0), c2),
        ],
    )
    .unwrap()
}

/// `A = [[0,1],[0,0]]`, `B = [0,1]ᵀ`.
pub fn double_integrator(horizon: f64, x: [f64; 2], y: [f64; 2]) -> ProblemSpec {
    let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
    let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
    ProblemSpec::new(
        constant(a, horizon),
        constant(b, horizon),
        0.0,
        horizon,
        DVector::from_row_slice(&x),
        DVector::from_row_slice(&y),
        QuadraticFunctional::cost(constant(DMatrix::zeros(2, 2), horizon), scalar(1.0, horizon)),
        vec![],
    )
    .unwrap()
}

pub fn gaussian<R: Rng>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

pub fn gaussian_vec<R: Rng>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// `L Lᵀ / n + floor·I` with Gaussian `L`.
pub fn random_psd<R: Rng>(rng: &mut R, n: usize, floor: f64) -> DMatrix<f64> {
    let l = gaussian(rng, n, n, 1.0);
    let mut p = &l * l.transpose() / n as f64 + DMatrix::identity(n, n) * floor;
    p = (&p + p.transpose()) * 0.5;
    p
}

/// Samples `base + wiggle·sin(2πs/T + phase)` on a 21-node linear grid.
fn time_varying(base: DMatrix<f64>, wiggle: DMatrix<f64>, phase: f64, horizon: f64) -> TimeGridMatrixFn {
    let nodes = 21;
    let grid: Vec<f64> = (0..nodes).map(|j| horizon * j as f64 / (nodes - 1) as f64).collect();
    let values = grid
        .iter()
        .map(|&s| {
            let w = (2.0 * std::f64::consts::PI * s / horizon + phase).sin();
            &base + &wiggle * w
        })
        .collect();
    TimeGridMatrixFn::new(grid, values, clq::model::Interp::Linear).unwrap()
}

#[derive(Debug, Clone, Copy)]
pub struct Shape {
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub time_varying: bool,
}

/// A random well-posed spec. Constraint bounds are placeholders; see
/// [`with_active_budgets`].
pub fn random_spec<R: Rng>(rng: &mut R, shape: Shape) -> ProblemSpec {
    let Shape { n, m, k, time_varying: tv } = shape;
    let horizon = 1.0;
    let phase: f64 = rng.random_range(0.0..6.0);
    let coeff = |base: DMatrix<f64>, wiggle: DMatrix<f64>| {
        if tv {
            time_varying(base, wiggle, phase, horizon)
        } else {
            constant(base, horizon)
        }
    };
    let a0 = gaussian(rng, n, n, 0.7 / (n as f64).sqrt());
    let a1 = gaussian(rng, n, n, 0.3);
    let b0 = gaussian(rng, n, m, 1.0);
    let b1 = gaussian(rng, n, m, 0.2);
    let q0 = random_psd(rng, n, 0.0);
    let r0 = random_psd(rng, m, 0.5);
    // the R wiggle stays below the 0.5 floor
    let cost = QuadraticFunctional::cost(
        coeff(q0, DMatrix::zeros(n, n)),
        coeff(r0, DMatrix::identity(m, m) * 0.2),
    );
    let constraints = (0..k)
        .map(|_| {
            let q = random_psd(rng, n, 0.0) * 0.5;
            let r = random_psd(rng, m, 0.5);
            QuadraticFunctional::constraint(coeff(q, DMatrix::zeros(n, n)), coeff(r, DMatrix::zeros(m, m)), 1.0)
        })
        .collect();
    let x = gaussian_vec(rng, n);
    let y = gaussian_vec(rng, n);
    ProblemSpec::new(
        coeff(a0, a1),
        coeff(b0, b1),
        0.0,
        horizon,
        x,
        y,
        cost,
        constraints,
    )
    .unwrap()
}

/// Sets each bound halfway between the smallest reachable `J_i` and the
/// `J_i` of the unconstrained optimum, so every budget binds.
pub fn with_active_budgets(spec: ProblemSpec, opts: &SolverOptions) -> ProblemSpec {
    let k = spec.k();
    if k == 0 {
        return spec;
    }
    let (_, free) = solve_weighted(&spec, &LambdaWeights::zeros(k), opts).unwrap();
    let bounds: Vec<f64> = spec
        .constraints()
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let only = ProblemSpec::new(
                spec.a().clone(),
                spec.b().clone(),
                spec.t0(),
                spec.horizon(),
                spec.x().clone(),
                spec.y().clone(),
                QuadraticFunctional::cost(f.q.clone(), f.r.clone()),
                vec![],
            )
            .unwrap();
            let least = value_function(&only, &LambdaWeights::zeros(0), opts).unwrap();
            let at_free = free.functionals[i + 1];
            least + 0.5 * (at_free - least).max(1e-3 * (1.0 + least))
        })
        .collect();
    spec.with_bounds(&bounds).unwrap()
}

/// Standard Gaussian LTI pair with `rank` controllable directions, hidden by a random
/// permutation similarity so that structural zeros stay exact.
pub fn random_lti<R: Rng>(rng: &mut R, n: usize, m: usize, rank: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut a = gaussian(rng, n, n, 1.0);
    let mut b = gaussian(rng, n, m, 1.0);
    for i in rank..n {
        for j in 0..rank {
            a[(i, j)] = 0.0;
        }
        for j in 0..m {
            b[(i, j)] = 0.0;
        }
    }
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        perm.swap(i, rng.random_range(0..=i));
    }
    let pa = DMatrix::from_fn(n, n, |i, j| a[(perm[i], perm[j])]);
    let pb = DMatrix::from_fn(n, m, |i, j| b[(perm[i], j)]);
    (pa, pb)
}

/// Zero-cost spec around an LTI pair, for Gramian and steering checks.
pub fn lti_spec(a: DMatrix<f64>, b: DMatrix<f64>, horizon: f64) -> ProblemSpec {
    let (n, m) = (a.nrows(), b.ncols());
    ProblemSpec::new(
        constant(a, horizon),
        constant(b, horizon),
        0.0,
        horizon,
        DVector::zeros(n),
        DVector::zeros(n),
        QuadraticFunctional::cost(constant(DMatrix::zeros(n, n), horizon), constant(DMatrix::identity(m, m), horizon)),
        vec![],
    )
    .unwrap()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}
