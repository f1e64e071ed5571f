//! The λ-weighted linear system `(A, B, Q(λ), R(λ))`, optionally viewed in
//! reversed time.

use nalgebra::DMatrix;

use crate::error::Result;
use crate::model::{combine_weights, LambdaWeights, ProblemSpec, TimeGridMatrixFn};

#[derive(Debug, Clone)]
pub struct LqSystem {
    a: TimeGridMatrixFn,
    b: TimeGridMatrixFn,
    q: TimeGridMatrixFn,
    r: TimeGridMatrixFn,
    /// When set to `p`, coefficients are read at `p - s` and `A`, `B` are
    /// negated.
    pivot: Option<f64>,
    breakpoints: Vec<f64>,
}

impl LqSystem {
    pub fn new(a: TimeGridMatrixFn, b: TimeGridMatrixFn, q: TimeGridMatrixFn, r: TimeGridMatrixFn) -> Self {
        let mut breakpoints: Vec<f64> = [&a, &b, &q, &r]
            .iter()
            .flat_map(|f| f.breakpoints().iter().copied())
            .collect();
        breakpoints.sort_by(f64::total_cmp);
        breakpoints.dedup();
        Self {
            a,
            b,
            q,
            r,
            pivot: None,
            breakpoints,
        }
    }

    pub fn from_spec(spec: &ProblemSpec, lam: &LambdaWeights) -> Result<Self> {
        let (q, r) = combine_weights(spec, lam)?;
        Ok(Self::new(spec.a().clone(), spec.b().clone(), q, r))
    }

    /// The system seen backward from `pivot`: `Ā(s) = -A(pivot - s)`,
    /// `B̄(s) = -B(pivot - s)`, weights read at `pivot - s`.
    pub fn reversed(&self, pivot: f64) -> Self {
        let mut out = self.clone();
        out.pivot = match self.pivot {
            None => Some(pivot),
            Some(_) => panic!("reversing an already reversed system"),
        };
        out.breakpoints = self.breakpoints.iter().rev().map(|b| pivot - b).collect();
        out
    }

    pub fn n(&self) -> usize {
        self.a.shape().0
    }

    pub fn m(&self) -> usize {
        self.b.shape().1
    }

    fn at(&self, s: f64) -> f64 {
        self.pivot.map_or(s, |p| p - s)
    }

    pub fn a(&self, s: f64) -> DMatrix<f64> {
        let v = self.a.eval(self.at(s));
        if self.pivot.is_some() {
            -v
        } else {
            v
        }
    }

    pub fn b(&self, s: f64) -> DMatrix<f64> {
        let v = self.b.eval(self.at(s));
        if self.pivot.is_some() {
            -v
        } else {
            v
        }
    }

    pub fn q(&self, s: f64) -> DMatrix<f64> {
        self.q.eval(self.at(s))
    }

    pub fn r(&self, s: f64) -> DMatrix<f64> {
        self.r.eval(self.at(s))
    }

    /// `R(s)⁻¹ B(s)ᵀ`; non-finite when `R(s)` is not positive definite.
    pub fn r_inv_bt(&self, s: f64) -> DMatrix<f64> {
        let bt = self.b(s).transpose();
        match self.r(s).cholesky() {
            Some(chol) => chol.solve(&bt),
            None => bt * f64::NAN,
        }
    }

    /// `B(s) R(s)⁻¹ B(s)ᵀ`.
    pub fn brb(&self, s: f64) -> DMatrix<f64> {
        self.b(s) * self.r_inv_bt(s)
    }

    /// Interior coefficient nodes in this system's time.
    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }
}
