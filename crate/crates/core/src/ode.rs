//! Adaptive Dormand–Prince 5(4) integrator with continuous output.
//!
//! States are flat `DVector`s; matrix ODEs are integrated column-major via
//! [`crate::linalg::flatten`]. Integration may run forward or backward in
//! time. Each accepted step stores the coefficients of the method's fourth
//! order continuous extension, so [`DenseSolution::eval`] is accurate to the
//! same order as the step itself between nodes.

use nalgebra::DVector;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OdeError {
    #[error("step size underflow at t={t}")]
    StepSizeUnderflow { t: f64 },
    #[error("exceeded {max_steps} steps at t={t}")]
    MaxStepsExceeded { t: f64, max_steps: usize },
    #[error("non-finite initial state or derivative at t={t}")]
    NonFinite { t: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    /// Upper bound on |h|; `None` means the whole interval.
    pub h_max: Option<f64>,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-9,
            atol: 1e-11,
            max_steps: 200_000,
            h_max: None,
        }
    }
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

#[derive(Debug, Clone)]
struct Segment {
    t: f64,
    h: f64,
    coeffs: [DVector<f64>; 5],
}

impl Segment {
    fn eval(&self, t: f64) -> DVector<f64> {
        let theta = (t - self.t) / self.h;
        let theta1 = 1.0 - theta;
        let [r1, r2, r3, r4, r5] = &self.coeffs;
        r1 + (r2 + (r3 + (r4 + r5 * theta1) * theta) * theta1) * theta
    }
}

/// Continuous solution of an initial value problem.
#[derive(Debug, Clone)]
pub struct DenseSolution {
    t_start: f64,
    t_end: f64,
    y_start: DVector<f64>,
    segments: Vec<Segment>,
}

impl DenseSolution {
    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn dim(&self) -> usize {
        self.y_start.len()
    }

    pub fn steps(&self) -> usize {
        self.segments.len()
    }

    fn forward(&self) -> bool {
        self.t_end >= self.t_start
    }

    /// Accepted step nodes `(t, y)` in integration order, including the
    /// initial point.
    pub fn nodes(&self) -> impl Iterator<Item = (f64, DVector<f64>)> + '_ {
        std::iter::once((self.t_start, self.y_start.clone())).chain(
            self.segments
                .iter()
                .map(|seg| (seg.t + seg.h, &seg.coeffs[0] + &seg.coeffs[1])),
        )
    }

    pub fn final_state(&self) -> DVector<f64> {
        match self.segments.last() {
            Some(seg) => &seg.coeffs[0] + &seg.coeffs[1],
            None => self.y_start.clone(),
        }
    }

    /// Evaluates the solution at `t`, clamped to the integrated interval.
    pub fn eval(&self, t: f64) -> DVector<f64> {
        if self.segments.is_empty() {
            return self.y_start.clone();
        }
        let (lo, hi) = if self.forward() {
            (self.t_start, self.t_end)
        } else {
            (self.t_end, self.t_start)
        };
        let t = t.clamp(lo, hi);
        let forward = self.forward();
        // first segment whose far end reaches t
        let idx = self.segments.partition_point(|seg| {
            let end = seg.t + seg.h;
            if forward {
                end < t
            } else {
                end > t
            }
        });
        let seg = &self.segments[idx.min(self.segments.len() - 1)];
        seg.eval(t)
    }
}

fn error_norm(err: &DVector<f64>, y0: &DVector<f64>, y1: &DVector<f64>, opts: &OdeOptions) -> f64 {
    let n = err.len().max(1) as f64;
    let sum: f64 = err
        .iter()
        .zip(y0.iter().zip(y1.iter()))
        .map(|(e, (a, b))| {
            let sc = opts.atol + opts.rtol * a.abs().max(b.abs());
            (e / sc).powi(2)
        })
        .sum();
    (sum / n).sqrt()
}

fn initial_step<F>(
    rhs: &mut F,
    t0: f64,
    y0: &DVector<f64>,
    f0: &DVector<f64>,
    dir: f64,
    span: f64,
    opts: &OdeOptions,
) -> f64
where
    F: FnMut(f64, &DVector<f64>) -> DVector<f64>,
{
    let scale = |v: &DVector<f64>| -> f64 {
        let n = v.len().max(1) as f64;
        (v.iter()
            .zip(y0.iter())
            .map(|(x, y)| (x / (opts.atol + opts.rtol * y.abs())).powi(2))
            .sum::<f64>()
            / n)
            .sqrt()
    };
    let d0 = scale(y0);
    let d1 = scale(f0);
    let mut h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    h0 = h0.min(span);
    let y1 = y0 + f0 * (dir * h0);
    let f1 = rhs(t0 + dir * h0, &y1);
    let d2 = scale(&(f1 - f0)) / h0;
    let dmax = d1.max(d2);
    let h1 = if dmax <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / dmax).powf(0.2)
    };
    (100.0 * h0).min(h1).min(span)
}

/// In-place correction applied to accepted states, e.g. symmetrization.
pub type Projection<'a> = &'a dyn Fn(&mut DVector<f64>);

/// Integrates `y' = rhs(t, y)` from `t0` to `t1` (either direction).
///
/// `breakpoints` are times where the right-hand side may have a kink; steps
/// land on them exactly and the derivative is re-evaluated there. `project`
/// is applied to every accepted state.
pub fn integrate<F>(
    mut rhs: F,
    t0: f64,
    y0: DVector<f64>,
    t1: f64,
    breakpoints: &[f64],
    opts: &OdeOptions,
    project: Option<Projection<'_>>,
) -> Result<DenseSolution, OdeError>
where
    F: FnMut(f64, &DVector<f64>) -> DVector<f64>,
{
    if y0.iter().any(|v| !v.is_finite()) {
        return Err(OdeError::NonFinite { t: t0 });
    }
    let mut sol = DenseSolution {
        t_start: t0,
        t_end: t1,
        y_start: y0.clone(),
        segments: Vec::new(),
    };
    if t1 == t0 {
        return Ok(sol);
    }
    let dir = if t1 > t0 { 1.0 } else { -1.0 };
    let span = (t1 - t0).abs();
    let h_max = opts.h_max.unwrap_or(span).min(span);

    // interior stops in integration order, ending at t1
    let mut stops: Vec<f64> = breakpoints
        .iter()
        .copied()
        .filter(|&b| (b - t0) * dir > 1e-14 * span && (t1 - b) * dir > 1e-14 * span)
        .collect();
    stops.sort_by(|a, b| (a * dir).total_cmp(&(b * dir)));
    stops.dedup();
    stops.push(t1);

    let mut t = t0;
    let mut y = y0;
    let mut k1 = rhs(t, &y);
    if k1.iter().any(|v| !v.is_finite()) {
        return Err(OdeError::NonFinite { t });
    }
    let mut h = initial_step(&mut rhs, t, &y, &k1, dir, h_max, opts);
    let mut steps = 0usize;
    let mut stop_idx = 0usize;

    while stop_idx < stops.len() {
        let target = stops[stop_idx];
        let remaining = (target - t).abs();
        // also stretch a step that would leave a sliver before the stop
        let landing = h >= remaining || (h > 0.5 * remaining && remaining - h < 1e-3 * h);
        if landing {
            h = remaining;
        }
        if h < 1e-14 * t.abs().max(span) {
            return Err(OdeError::StepSizeUnderflow { t });
        }
        steps += 1;
        if steps > opts.max_steps {
            return Err(OdeError::MaxStepsExceeded {
                t,
                max_steps: opts.max_steps,
            });
        }

        let hs = dir * h;
        let k2 = rhs(t + C2 * hs, &(&y + &k1 * (A21 * hs)));
        let k3 = rhs(t + C3 * hs, &(&y + (&k1 * A31 + &k2 * A32) * hs));
        let k4 = rhs(t + C4 * hs, &(&y + (&k1 * A41 + &k2 * A42 + &k3 * A43) * hs));
        let k5 = rhs(
            t + C5 * hs,
            &(&y + (&k1 * A51 + &k2 * A52 + &k3 * A53 + &k4 * A54) * hs),
        );
        let t_new = if landing { target } else { t + hs };
        let k6 = rhs(
            t_new,
            &(&y + (&k1 * A61 + &k2 * A62 + &k3 * A63 + &k4 * A64 + &k5 * A65) * hs),
        );
        let y_new = &y + (&k1 * A71 + &k3 * A73 + &k4 * A74 + &k5 * A75 + &k6 * A76) * hs;
        let k7 = rhs(t_new, &y_new);
        let err_vec = (&k1 * E1 + &k3 * E3 + &k4 * E4 + &k5 * E5 + &k6 * E6 + &k7 * E7) * hs;
        let mut err = error_norm(&err_vec, &y, &y_new, opts);
        if !err.is_finite() || y_new.iter().any(|v| !v.is_finite()) {
            err = f64::INFINITY;
        }

        if err <= 1.0 {
            let ydiff = &y_new - &y;
            let bspl = &k1 * hs - &ydiff;
            let r4 = &ydiff - &k7 * hs - &bspl;
            let r5 = (&k1 * D1 + &k3 * D3 + &k4 * D4 + &k5 * D5 + &k6 * D6 + &k7 * D7) * hs;
            sol.segments.push(Segment {
                t,
                h: hs,
                coeffs: [y.clone(), ydiff, bspl, r4, r5],
            });
            let mut y_acc = y_new;
            let projected = if let Some(p) = project {
                p(&mut y_acc);
                true
            } else {
                false
            };
            t = t_new;
            y = y_acc;
            let factor = if err == 0.0 {
                5.0
            } else {
                (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
            };
            if landing {
                stop_idx += 1;
                // the derivative may jump at a breakpoint
                k1 = if stop_idx < stops.len() { rhs(t, &y) } else { k7 };
            } else {
                k1 = if projected { rhs(t, &y) } else { k7 };
            }
            h = (h * factor).min(h_max);
        } else {
            let factor = if err.is_finite() {
                (0.9 * err.powf(-0.2)).clamp(0.1, 1.0)
            } else {
                0.1
            };
            h *= factor;
        }
    }
    Ok(sol)
}
