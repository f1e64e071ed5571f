//! Problem data: time-varying coefficients, quadratic functionals and the
//! constrained problem itself.

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{ClqError, Result};
use crate::linalg;
use crate::trajectory::Trajectory;

pub const SYMMETRY_TOL: f64 = 1e-12;
pub const PSD_TOL: f64 = -1e-10;
pub const DEFAULT_R0_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interp {
    /// Node `j` holds on `[grid[j], grid[j+1])`.
    PiecewiseConstantLeft,
    Linear,
}

/// A matrix-valued function of time sampled on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGridMatrixFn {
    grid: Vec<f64>,
    values: Vec<DMatrix<f64>>,
    interp: Interp,
}

impl TimeGridMatrixFn {
    pub fn new(grid: Vec<f64>, values: Vec<DMatrix<f64>>, interp: Interp) -> Result<Self> {
        if grid.len() < 2 {
            return Err(ClqError::InvalidSpec("time grid needs at least two nodes".into()));
        }
        if grid.len() != values.len() {
            return Err(ClqError::DimensionMismatch(format!(
                "{} grid nodes but {} values",
                grid.len(),
                values.len()
            )));
        }
        if grid.iter().any(|t| !t.is_finite()) || grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(ClqError::InvalidSpec("time grid must be strictly increasing".into()));
        }
        let shape = values[0].shape();
        if values.iter().any(|v| v.shape() != shape) {
            return Err(ClqError::DimensionMismatch(
                "grid values must share one shape".into(),
            ));
        }
        if values.iter().any(|v| v.iter().any(|x| !x.is_finite())) {
            return Err(ClqError::InvalidSpec("grid values must be finite".into()));
        }
        Ok(Self { grid, values, interp })
    }

    /// The same matrix at every time in `[0, horizon]`.
    pub fn constant(value: DMatrix<f64>, horizon: f64) -> Self {
        Self {
            grid: vec![0.0, horizon],
            values: vec![value.clone(), value],
            interp: Interp::Linear,
        }
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self) -> &[DMatrix<f64>] {
        &self.values
    }

    pub fn interp(&self) -> Interp {
        self.interp
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values[0].shape()
    }

    pub fn start(&self) -> f64 {
        self.grid[0]
    }

    pub fn end(&self) -> f64 {
        *self.grid.last().unwrap()
    }

    pub fn is_constant(&self) -> bool {
        self.values.windows(2).all(|w| w[0] == w[1])
    }

    /// Interior grid nodes, where the function may have a kink or jump.
    pub fn breakpoints(&self) -> &[f64] {
        &self.grid[1..self.grid.len() - 1]
    }

    /// Value at `s`, clamped to the grid span.
    pub fn eval(&self, s: f64) -> DMatrix<f64> {
        let last = self.grid.len() - 1;
        if s <= self.grid[0] {
            return self.values[0].clone();
        }
        if s >= self.grid[last] {
            return self.values[last].clone();
        }
        // grid[j] <= s < grid[j + 1]
        let j = self.grid.partition_point(|&t| t <= s) - 1;
        match self.interp {
            Interp::PiecewiseConstantLeft => self.values[j].clone(),
            Interp::Linear => {
                let w = (s - self.grid[j]) / (self.grid[j + 1] - self.grid[j]);
                &self.values[j] * (1.0 - w) + &self.values[j + 1] * w
            }
        }
    }

    /// `Σ c_k f_k` on the merged grid of all operands. Exact when every
    /// operand uses the same interpolation; mixed operands are resampled
    /// linearly at the merged nodes.
    pub fn linear_combination(terms: &[(f64, &TimeGridMatrixFn)]) -> Result<Self> {
        let Some((_, first)) = terms.first() else {
            return Err(ClqError::DimensionMismatch("empty combination".into()));
        };
        let shape = first.shape();
        if let Some((_, bad)) = terms.iter().find(|(_, f)| f.shape() != shape) {
            return Err(ClqError::DimensionMismatch(format!(
                "cannot combine {}x{} with {}x{}",
                shape.0,
                shape.1,
                bad.shape().0,
                bad.shape().1
            )));
        }
        let mut grid: Vec<f64> = terms.iter().flat_map(|(_, f)| f.grid.iter().copied()).collect();
        grid.sort_by(f64::total_cmp);
        let span = grid.last().unwrap() - grid[0];
        grid.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * span.max(1.0));
        let interp = if terms.iter().all(|(_, f)| f.interp == first.interp) {
            first.interp
        } else {
            Interp::Linear
        };
        let values = grid
            .iter()
            .map(|&s| {
                terms
                    .iter()
                    .fold(DMatrix::zeros(shape.0, shape.1), |acc, (c, f)| acc + f.eval(s) * *c)
            })
            .collect();
        Ok(Self { grid, values, interp })
    }
}

/// `∫ ⟨Q X, X⟩ + ⟨R u, u⟩ ds`, optionally with a budget `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticFunctional {
    pub q: TimeGridMatrixFn,
    pub r: TimeGridMatrixFn,
    pub bound: Option<f64>,
}

impl QuadraticFunctional {
    pub fn cost(q: TimeGridMatrixFn, r: TimeGridMatrixFn) -> Self {
        Self { q, r, bound: None }
    }

    pub fn constraint(q: TimeGridMatrixFn, r: TimeGridMatrixFn, bound: f64) -> Self {
        Self {
            q,
            r,
            bound: Some(bound),
        }
    }
}

/// Nonnegative multipliers, one per constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaWeights(Vec<f64>);

impl LambdaWeights {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(ClqError::InvalidSpec(format!(
                "multipliers must be finite and nonnegative: {values:?}"
            )));
        }
        Ok(Self(values))
    }

    pub fn zeros(k: usize) -> Self {
        Self(vec![0.0; k])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Steer `x` at `t0` to `y` at `T` minimizing the cost functional subject to
/// the constraint budgets.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    n: usize,
    m: usize,
    a: TimeGridMatrixFn,
    b: TimeGridMatrixFn,
    t0: f64,
    horizon: f64,
    x: DVector<f64>,
    y: DVector<f64>,
    cost: QuadraticFunctional,
    constraints: Vec<QuadraticFunctional>,
    r0_floor: f64,
}

impl ProblemSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        a: TimeGridMatrixFn,
        b: TimeGridMatrixFn,
        t0: f64,
        horizon: f64,
        x: DVector<f64>,
        y: DVector<f64>,
        cost: QuadraticFunctional,
        constraints: Vec<QuadraticFunctional>,
    ) -> Result<Self> {
        let (n, n2) = a.shape();
        let mismatch = |what: &str| Err(ClqError::DimensionMismatch(what.to_string()));
        if n != n2 {
            return mismatch("A must be square");
        }
        let (bn, m) = b.shape();
        if bn != n {
            return mismatch("B must have as many rows as A");
        }
        if x.len() != n || y.len() != n {
            return mismatch("x and y must have length n");
        }
        if !(horizon.is_finite() && t0.is_finite() && 0.0 <= t0 && t0 < horizon) {
            return Err(ClqError::InvalidSpec(format!(
                "need 0 <= t0 < T, got t0={t0}, T={horizon}"
            )));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(ClqError::InvalidSpec("x and y must be finite".into()));
        }
        for (i, f) in std::iter::once(&cost).chain(constraints.iter()).enumerate() {
            if f.q.shape() != (n, n) {
                return mismatch(&format!("Q_{i} must be {n}x{n}"));
            }
            if f.r.shape() != (m, m) {
                return mismatch(&format!("R_{i} must be {m}x{m}"));
            }
        }
        if cost.bound.is_some() {
            return Err(ClqError::InvalidSpec("the cost functional has no bound".into()));
        }
        for (i, f) in constraints.iter().enumerate() {
            match f.bound {
                Some(c) if c > 0.0 && c.is_finite() => {}
                other => {
                    return Err(ClqError::InvalidSpec(format!(
                        "constraint {} needs a bound c > 0, got {other:?}",
                        i + 1
                    )))
                }
            }
        }
        let fns = [&a, &b]
            .into_iter()
            .chain(std::iter::once(&cost).chain(constraints.iter()).flat_map(|f| [&f.q, &f.r]));
        for f in fns {
            if f.start() != 0.0 || (f.end() - horizon).abs() > 1e-12 * horizon.max(1.0) {
                return Err(ClqError::InvalidSpec(format!(
                    "coefficient grid must span [0, {horizon}], got [{}, {}]",
                    f.start(),
                    f.end()
                )));
            }
        }
        Ok(Self {
            n,
            m,
            a,
            b,
            t0,
            horizon,
            x,
            y,
            cost,
            constraints,
            r0_floor: DEFAULT_R0_FLOOR,
        })
    }

    /// Declared lower bound δ on the eigenvalues of `R_0`.
    pub fn with_r0_floor(mut self, delta: f64) -> Self {
        self.r0_floor = delta;
        self
    }

    pub fn with_boundary(mut self, x: DVector<f64>, y: DVector<f64>) -> Result<Self> {
        if x.len() != self.n || y.len() != self.n {
            return Err(ClqError::DimensionMismatch("x and y must have length n".into()));
        }
        self.x = x;
        self.y = y;
        Ok(self)
    }

    pub fn with_bounds(mut self, bounds: &[f64]) -> Result<Self> {
        if bounds.len() != self.constraints.len() {
            return Err(ClqError::DimensionMismatch(format!(
                "{} bounds for {} constraints",
                bounds.len(),
                self.constraints.len()
            )));
        }
        if bounds.iter().any(|c| !(*c > 0.0 && c.is_finite())) {
            return Err(ClqError::InvalidSpec("bounds must be positive".into()));
        }
        for (f, c) in self.constraints.iter_mut().zip(bounds) {
            f.bound = Some(*c);
        }
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn m(&self) -> usize {
        self.m
    }
    pub fn k(&self) -> usize {
        self.constraints.len()
    }
    pub fn a(&self) -> &TimeGridMatrixFn {
        &self.a
    }
    pub fn b(&self) -> &TimeGridMatrixFn {
        &self.b
    }
    pub fn t0(&self) -> f64 {
        self.t0
    }
    pub fn horizon(&self) -> f64 {
        self.horizon
    }
    pub fn x(&self) -> &DVector<f64> {
        &self.x
    }
    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }
    pub fn cost(&self) -> &QuadraticFunctional {
        &self.cost
    }
    pub fn constraints(&self) -> &[QuadraticFunctional] {
        &self.constraints
    }
    pub fn r0_floor(&self) -> f64 {
        self.r0_floor
    }

    /// Cost followed by constraints.
    pub fn functionals(&self) -> impl Iterator<Item = &QuadraticFunctional> {
        std::iter::once(&self.cost).chain(self.constraints.iter())
    }

    pub fn bounds(&self) -> Vec<f64> {
        self.constraints.iter().filter_map(|f| f.bound).collect()
    }

    /// Every interior coefficient node in `(0, T)`.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut pts: Vec<f64> = [&self.a, &self.b]
            .into_iter()
            .chain(self.functionals().flat_map(|f| [&f.q, &f.r]))
            .flat_map(|f| f.breakpoints().iter().copied())
            .collect();
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        pts
    }

    /// Fails with the validation report when the weights violate the
    /// standing assumptions.
    pub fn ensure_valid(&self) -> Result<()> {
        let report = validate_spec(self);
        if report.is_empty() {
            Ok(())
        } else {
            Err(ClqError::InvalidSpec(report.to_string()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightKind {
    Q,
    R,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Asymmetric { mismatch: f64 },
    NotPositiveSemidefinite { min_eig: f64 },
    NotUniformlyPositive { min_eig: f64, floor: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationIssue {
    /// 0 is the cost functional, `i >= 1` the i-th constraint.
    pub functional: usize,
    pub weight: WeightKind,
    pub node: usize,
    pub violation: Violation,
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self.weight {
            WeightKind::Q => "Q",
            WeightKind::R => "R",
        };
        let i = self.functional;
        match &self.violation {
            Violation::Asymmetric { mismatch } => write!(
                f,
                "{name}_{i} not symmetric at node {} (mismatch {mismatch:.3e})",
                self.node
            ),
            Violation::NotPositiveSemidefinite { min_eig } => write!(
                f,
                "{name}_{i} not positive semidefinite at node {} (eigenvalue {min_eig:.3e})",
                self.node
            ),
            Violation::NotUniformlyPositive { min_eig, floor } => write!(
                f,
                "{name}_{i} not uniformly positive definite at node {} (eigenvalue {min_eig:.3e} < {floor:.3e})",
                self.node
            ),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.issues.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, issue) in self.issues.iter().enumerate() {
            if k > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{issue}")?;
        }
        Ok(())
    }
}

fn check_weight(
    issues: &mut Vec<ValidationIssue>,
    functional: usize,
    weight: WeightKind,
    f: &TimeGridMatrixFn,
    floor: Option<f64>,
) {
    for (node, v) in f.values().iter().enumerate() {
        let mut push = |violation| {
            issues.push(ValidationIssue {
                functional,
                weight,
                node,
                violation,
            })
        };
        let mismatch = linalg::asymmetry(v);
        if mismatch > SYMMETRY_TOL {
            push(Violation::Asymmetric { mismatch });
        }
        let min_eig = linalg::min_eigenvalue(v);
        match floor {
            Some(floor) if min_eig < floor => push(Violation::NotUniformlyPositive { min_eig, floor }),
            _ if min_eig < PSD_TOL => push(Violation::NotPositiveSemidefinite { min_eig }),
            _ => {}
        }
    }
}

/// Checks symmetry and definiteness of every weight node.
pub fn validate_spec(spec: &ProblemSpec) -> ValidationReport {
    let mut issues = Vec::new();
    for (i, f) in spec.functionals().enumerate() {
        check_weight(&mut issues, i, WeightKind::Q, &f.q, None);
        let floor = (i == 0).then_some(spec.r0_floor);
        check_weight(&mut issues, i, WeightKind::R, &f.r, floor);
    }
    ValidationReport { issues }
}

/// `Q(λ) = Q_0 + Σ λ_i Q_i`, `R(λ) = R_0 + Σ λ_i R_i`.
pub fn combine_weights(
    spec: &ProblemSpec,
    lam: &LambdaWeights,
) -> Result<(TimeGridMatrixFn, TimeGridMatrixFn)> {
    if lam.len() != spec.k() {
        return Err(ClqError::DimensionMismatch(format!(
            "{} multipliers for {} constraints",
            lam.len(),
            spec.k()
        )));
    }
    let weights: Vec<f64> = std::iter::once(1.0).chain(lam.as_slice().iter().copied()).collect();
    let q_terms: Vec<(f64, &TimeGridMatrixFn)> =
        weights.iter().copied().zip(spec.functionals().map(|f| &f.q)).collect();
    let r_terms: Vec<(f64, &TimeGridMatrixFn)> =
        weights.iter().copied().zip(spec.functionals().map(|f| &f.r)).collect();
    Ok((
        TimeGridMatrixFn::linear_combination(&q_terms)?,
        TimeGridMatrixFn::linear_combination(&r_terms)?,
    ))
}

/// Composite trapezoid of `⟨Q X, X⟩ + ⟨R u, u⟩` on the trajectory's samples.
pub fn eval_functional(fun: &QuadraticFunctional, traj: &Trajectory) -> Result<f64> {
    if traj.times.is_empty() {
        return Err(ClqError::EmptyTrajectory);
    }
    let (n, _) = fun.q.shape();
    let (m, _) = fun.r.shape();
    if traj.states.iter().any(|x| x.len() != n) || traj.controls.iter().any(|u| u.len() != m) {
        return Err(ClqError::DimensionMismatch(
            "trajectory dimensions do not match the functional".into(),
        ));
    }
    let integrand: Vec<f64> = traj
        .times
        .iter()
        .zip(traj.states.iter().zip(traj.controls.iter()))
        .map(|(&s, (x, u))| linalg::quad_form(&fun.q.eval(s), x) + linalg::quad_form(&fun.r.eval(s), u))
        .collect();
    Ok(trapezoid(&traj.times, &integrand))
}

pub(crate) fn trapezoid(times: &[f64], values: &[f64]) -> f64 {
    times
        .windows(2)
        .zip(values.windows(2))
        .map(|(t, v)| 0.5 * (t[1] - t[0]) * (v[0] + v[1]))
        .sum()
}
