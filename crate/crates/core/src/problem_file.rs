//! TOML problem files.
//!
//! ```toml
//! [horizon]
//! t0 = 0.0
//! T = 1.0
//!
//! [dims]
//! n = 1
//! m = 1
//!
//! [dynamics]
//! A = [[1.0]]          # row-major literal
//! B = { interp = "linear", samples = [[0.0, 1.0], [1.0, 2.0]] }
//!
//! [cost]
//! Q = [[15.0]]
//! R = [[1.0]]
//!
//! [[constraint]]
//! Q = [[0.0]]
//! R = [[1.0]]
//! c = 3.0
//!
//! [boundary]
//! x = [1.0]
//! y = [0.0]
//!
//! [solver]             # optional
//! eps_T = 1e-3
//! ```
//!
//! A sampled table row is `[s, entries...]` with the entries row-major.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ClqError, Result};
use crate::model::{Interp, ProblemSpec, QuadraticFunctional, TimeGridMatrixFn, DEFAULT_R0_FLOOR};
use crate::options::SolverOptions;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub horizon: Horizon,
    pub dims: Dims,
    pub dynamics: Dynamics,
    pub cost: Cost,
    #[serde(default, rename = "constraint", skip_serializing_if = "Vec::is_empty")]
    pub constraints: Vec<Constraint>,
    pub boundary: Boundary,
    #[serde(default, skip_serializing_if = "Solver::is_empty")]
    pub solver: Solver,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Horizon {
    pub t0: f64,
    #[serde(rename = "T")]
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dims {
    pub n: usize,
    pub m: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dynamics {
    #[serde(rename = "A")]
    pub a: MatrixEntry,
    #[serde(rename = "B")]
    pub b: MatrixEntry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cost {
    #[serde(rename = "Q")]
    pub q: MatrixEntry,
    #[serde(rename = "R")]
    pub r: MatrixEntry,
    /// Declared lower bound on the eigenvalues of `R_0`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Constraint {
    #[serde(rename = "Q")]
    pub q: MatrixEntry,
    #[serde(rename = "R")]
    pub r: MatrixEntry,
    pub c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Boundary {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Solver {
    #[serde(rename = "eps_T", default, skip_serializing_if = "Option::is_none")]
    pub eps_t: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rtol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub atol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dual_tol: Option<f64>,
    #[serde(rename = "N_oracle", default, skip_serializing_if = "Option::is_none")]
    pub n_oracle: Option<usize>,
}

impl Solver {
    fn is_empty(&self) -> bool {
        *self == Self::default()
    }

    /// Applies the file's settings on top of `base`.
    pub fn apply(&self, base: SolverOptions) -> SolverOptions {
        SolverOptions {
            eps_t: self.eps_t.or(base.eps_t),
            rtol: self.rtol.unwrap_or(base.rtol),
            atol: self.atol.unwrap_or(base.atol),
            dual_tol: self.dual_tol.unwrap_or(base.dual_tol),
            n_oracle: self.n_oracle.unwrap_or(base.n_oracle),
            ..base
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterpName {
    Linear,
    PiecewiseConstant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixEntry {
    Literal(Vec<Vec<f64>>),
    Table {
        #[serde(default = "default_interp")]
        interp: InterpName,
        samples: Vec<Vec<f64>>,
    },
}

fn default_interp() -> InterpName {
    InterpName::Linear
}

fn bad(msg: impl Into<String>) -> ClqError {
    ClqError::Parse(msg.into())
}

fn literal(rows: &[Vec<f64>], shape: (usize, usize), name: &str) -> Result<DMatrix<f64>> {
    if rows.len() != shape.0 || rows.iter().any(|r| r.len() != shape.1) {
        return Err(bad(format!("{name} must be {}x{}", shape.0, shape.1)));
    }
    Ok(DMatrix::from_row_iterator(
        shape.0,
        shape.1,
        rows.iter().flatten().copied(),
    ))
}

impl MatrixEntry {
    fn to_fn(&self, shape: (usize, usize), horizon: f64, name: &str) -> Result<TimeGridMatrixFn> {
        match self {
            MatrixEntry::Literal(rows) => Ok(TimeGridMatrixFn::constant(literal(rows, shape, name)?, horizon)),
            MatrixEntry::Table { interp, samples } => {
                let width = 1 + shape.0 * shape.1;
                let mut grid = Vec::with_capacity(samples.len());
                let mut values = Vec::with_capacity(samples.len());
                for row in samples {
                    if row.len() != width {
                        return Err(bad(format!("{name}: each sample needs {width} numbers (s then entries)")));
                    }
                    grid.push(row[0]);
                    values.push(DMatrix::from_row_slice(shape.0, shape.1, &row[1..]));
                }
                let interp = match interp {
                    InterpName::Linear => Interp::Linear,
                    InterpName::PiecewiseConstant => Interp::PiecewiseConstantLeft,
                };
                TimeGridMatrixFn::new(grid, values, interp).map_err(|e| bad(format!("{name}: {e}")))
            }
        }
    }

    fn from_fn(f: &TimeGridMatrixFn) -> Self {
        let rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> { m.row_iter().map(|r| r.iter().copied().collect()).collect() };
        let canonical = TimeGridMatrixFn::constant(f.values()[0].clone(), f.end());
        if *f == canonical {
            return MatrixEntry::Literal(rows(&f.values()[0]));
        }
        let samples = f
            .grid()
            .iter()
            .zip(f.values())
            .map(|(s, v)| std::iter::once(*s).chain(v.transpose().iter().copied()).collect())
            .collect();
        MatrixEntry::Table {
            interp: match f.interp() {
                Interp::Linear => InterpName::Linear,
                Interp::PiecewiseConstantLeft => InterpName::PiecewiseConstant,
            },
            samples,
        }
    }
}

impl ProblemFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| bad(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| bad(e.to_string()))
    }

    pub fn to_spec(&self) -> Result<ProblemSpec> {
        let Dims { n, m } = self.dims;
        let horizon = self.horizon.t;
        let sq = |e: &MatrixEntry, dim: usize, name: &str| e.to_fn((dim, dim), horizon, name);
        let a = sq(&self.dynamics.a, n, "A")?;
        let b = self.dynamics.b.to_fn((n, m), horizon, "B")?;
        let cost = QuadraticFunctional::cost(sq(&self.cost.q, n, "cost.Q")?, sq(&self.cost.r, m, "cost.R")?);
        let constraints = self
            .constraints
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let name = |w: &str| format!("constraint[{i}].{w}");
                Ok(QuadraticFunctional::constraint(
                    sq(&c.q, n, &name("Q"))?,
                    sq(&c.r, m, &name("R"))?,
                    c.c,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        if self.boundary.x.len() != n || self.boundary.y.len() != n {
            return Err(bad(format!("boundary x and y must have {n} entries")));
        }
        let spec = ProblemSpec::new(
            a,
            b,
            self.horizon.t0,
            horizon,
            DVector::from_vec(self.boundary.x.clone()),
            DVector::from_vec(self.boundary.y.clone()),
            cost,
            constraints,
        )?;
        Ok(match self.cost.delta {
            Some(d) => spec.with_r0_floor(d),
            None => spec,
        })
    }

    pub fn from_spec(spec: &ProblemSpec, solver: Solver) -> Self {
        let e = MatrixEntry::from_fn;
        ProblemFile {
            horizon: Horizon {
                t0: spec.t0(),
                t: spec.horizon(),
            },
            dims: Dims { n: spec.n(), m: spec.m() },
            dynamics: Dynamics {
                a: e(spec.a()),
                b: e(spec.b()),
            },
            cost: Cost {
                q: e(&spec.cost().q),
                r: e(&spec.cost().r),
                delta: (spec.r0_floor() != DEFAULT_R0_FLOOR).then_some(spec.r0_floor()),
            },
            constraints: spec
                .constraints()
                .iter()
                .map(|f| Constraint {
                    q: e(&f.q),
                    r: e(&f.r),
                    c: f.bound.unwrap_or(f64::NAN),
                })
                .collect(),
            boundary: Boundary {
                x: spec.x().iter().copied().collect(),
                y: spec.y().iter().copied().collect(),
            },
            solver,
        }
    }
}

/// Reads a problem file from disk.
pub fn load(path: &std::path::Path) -> Result<(ProblemSpec, ProblemFile)> {
    let text = std::fs::read_to_string(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
    let file = ProblemFile::parse(&text)?;
    Ok((file.to_spec()?, file))
}
