mod common;

use clq::model::{
    combine_weights, eval_functional, validate_spec, Interp, Violation, WeightKind,
};
use clq::{LambdaWeights, ProblemSpec, QuadraticFunctional, TimeGridMatrixFn, Trajectory};
use common::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn min_eig(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigen().eigenvalues.min()
}

fn random_trajectory(seed: u64, n: usize, m: usize, samples: usize) -> Trajectory {
    let mut r = rng(seed);
    let times: Vec<f64> = (0..samples).map(|j| j as f64 / (samples - 1) as f64).collect();
    Trajectory {
        states: times.iter().map(|_| gaussian_vec(&mut r, n)).collect(),
        controls: times.iter().map(|_| gaussian_vec(&mut r, m)).collect(),
        times,
        terminal_miss: 0.0,
        standoff_gap: 0.0,
        functionals: vec![],
    }
}

fn shape_strategy() -> impl Strategy<Value = (u64, Shape)> {
    (any::<u64>(), 1usize..=3, 1usize..=2, 0usize..=2, any::<bool>()).prop_map(|(seed, n, m, k, tv)| {
        (
            seed,
            Shape {
                n,
                m,
                k,
                time_varying: tv,
            },
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn weighted_functional_is_linear_in_lambda(
        (seed, shape) in shape_strategy(),
        raw in proptest::collection::vec(0.0f64..5.0, 2),
    ) {
        let spec = random_spec(&mut rng(seed), shape);
        let lam = LambdaWeights::new(raw[..shape.k].to_vec()).unwrap();
        let (q, r) = combine_weights(&spec, &lam).unwrap();
        let traj = random_trajectory(seed ^ 1, shape.n, shape.m, 17);
        let combined = eval_functional(&QuadraticFunctional::cost(q, r), &traj).unwrap();
        let parts: Vec<f64> = spec.functionals().map(|f| eval_functional(f, &traj).unwrap()).collect();
        let expect = parts[0] + lam.as_slice().iter().zip(&parts[1..]).map(|(l, j)| l * j).sum::<f64>();
        prop_assert!((combined - expect).abs() <= 1e-10 * expect.abs().max(1.0));
        prop_assert!(parts.iter().all(|j| *j >= 0.0));
    }

    #[test]
    fn combined_weights_stay_admissible(
        (seed, shape) in shape_strategy(),
        raw in proptest::collection::vec(0.0f64..5.0, 2),
    ) {
        let spec = random_spec(&mut rng(seed), shape);
        prop_assert!(validate_spec(&spec).is_empty());
        let lam = LambdaWeights::new(raw[..shape.k].to_vec()).unwrap();
        let (q, r) = combine_weights(&spec, &lam).unwrap();
        let r0_floor = spec
            .cost()
            .r
            .values()
            .iter()
            .map(min_eig)
            .fold(f64::INFINITY, f64::min);
        for v in q.values() {
            prop_assert!((v - v.transpose()).amax() <= 1e-12);
            prop_assert!(min_eig(v) >= -1e-10);
        }
        for v in r.values() {
            prop_assert!(min_eig(v) >= r0_floor - 1e-12);
        }
    }
}

#[test]
fn trapezoid_is_second_order_on_smooth_integrand() {
    let q = QuadraticFunctional::cost(scalar(1.0, 1.0), scalar(0.0, 1.0));
    let exact = 0.5 - 6.0f64.sin() / 12.0;
    let error = |samples: usize| {
        let times: Vec<f64> = (0..samples).map(|j| j as f64 / (samples - 1) as f64).collect();
        let traj = Trajectory {
            states: times.iter().map(|s| vec1((3.0 * s).sin())).collect(),
            controls: times.iter().map(|_| vec1(0.0)).collect(),
            times,
            terminal_miss: 0.0,
            standoff_gap: 0.0,
            functionals: vec![],
        };
        (eval_functional(&q, &traj).unwrap() - exact).abs()
    };
    let errs: Vec<f64> = [11, 21, 41, 81].into_iter().map(error).collect();
    for w in errs.windows(2) {
        let ratio = w[0] / w[1];
        assert!(ratio >= 3.5, "ratio {ratio}: {errs:?}");
    }
}

#[test]
fn constant_integrand_and_zero_trajectory() {
    let q15 = QuadraticFunctional::cost(scalar(15.0, 1.0), scalar(1.0, 1.0));
    let mut traj = random_trajectory(3, 1, 1, 5);
    traj.states.iter_mut().for_each(|x| x[0] = 1.0);
    traj.controls.iter_mut().for_each(|u| u[0] = 0.0);
    assert!((eval_functional(&q15, &traj).unwrap() - 15.0).abs() < 1e-14);
    traj.states.iter_mut().for_each(|x| x[0] = 0.0);
    assert_eq!(eval_functional(&q15, &traj).unwrap(), 0.0);
}

#[test]
fn example_two_validates_and_combines() {
    let spec = example_two();
    assert!(validate_spec(&spec).is_empty());
    let lam = LambdaWeights::new(vec![0.1869]).unwrap();
    let (q, r) = combine_weights(&spec, &lam).unwrap();
    assert_eq!(q.eval(0.4)[(0, 0)], 15.0);
    assert!((r.eval(0.4)[(0, 0)] - 1.1869).abs() < 1e-15);

    let (q0, r0) = combine_weights(&spec, &LambdaWeights::zeros(1)).unwrap();
    assert_eq!(q0.eval(0.7), spec.cost().q.eval(0.7));
    assert_eq!(r0.eval(0.7), spec.cost().r.eval(0.7));
}

#[test]
fn identity_multiples_combine() {
    let eye = |v: f64| constant(DMatrix::identity(2, 2) * v, 1.0);
    let spec = ProblemSpec::new(
        eye(0.0),
        eye(1.0),
        0.0,
        1.0,
        DVector::zeros(2),
        DVector::zeros(2),
        QuadraticFunctional::cost(eye(0.0), eye(1.0)),
        vec![
            QuadraticFunctional::constraint(eye(1.0), eye(0.0), 1.0),
            QuadraticFunctional::constraint(eye(1.0), eye(0.0), 1.0),
        ],
    )
    .unwrap();
    let (q, _) = combine_weights(&spec, &LambdaWeights::new(vec![1.0, 2.0]).unwrap()).unwrap();
    assert!((q.eval(0.3) - DMatrix::identity(2, 2) * 3.0).amax() < 1e-14);
    assert!(combine_weights(&spec, &LambdaWeights::zeros(1)).is_err());
}

#[test]
fn validation_flags_each_violation() {
    let c = |v| scalar(v, 1.0);
    let singular_r = ProblemSpec::new(
        c(1.0),
        c(1.0),
        0.0,
        1.0,
        vec1(1.0),
        vec1(0.0),
        QuadraticFunctional::cost(c(0.0), c(0.0)),
        vec![],
    )
    .unwrap();
    let report = validate_spec(&singular_r);
    assert_eq!(report.issues.len(), 2, "{report}");
    assert!(report
        .issues
        .iter()
        .all(|i| i.weight == WeightKind::R && matches!(i.violation, Violation::NotUniformlyPositive { .. })));
    assert!(report.to_string().contains("not uniformly positive definite"));

    let skew = DMatrix::from_row_slice(2, 2, &[1.0, 1e-6, 0.0, 1.0]);
    let eye = |v: f64| constant(DMatrix::identity(2, 2) * v, 1.0);
    let asym = ProblemSpec::new(
        eye(0.0),
        eye(1.0),
        0.0,
        1.0,
        DVector::zeros(2),
        DVector::zeros(2),
        QuadraticFunctional::cost(constant(skew, 1.0), eye(1.0)),
        vec![],
    )
    .unwrap();
    let report = validate_spec(&asym);
    assert!(report.issues.iter().any(|i| i.weight == WeightKind::Q
        && matches!(i.violation, Violation::Asymmetric { mismatch } if mismatch >= 1e-6 * 0.99)));
    assert!(asym.ensure_valid().is_err());
}

#[test]
fn grid_invariants_are_enforced() {
    let m = |v: f64| DMatrix::from_element(1, 1, v);
    assert!(TimeGridMatrixFn::new(vec![0.0], vec![m(1.0)], Interp::Linear).is_err());
    assert!(TimeGridMatrixFn::new(vec![0.0, 0.5, 0.5, 1.0], vec![m(1.0); 4], Interp::Linear).is_err());
    assert!(TimeGridMatrixFn::new(
        vec![0.0, 1.0],
        vec![m(1.0), DMatrix::zeros(2, 2)],
        Interp::Linear
    )
    .is_err());

    let f = TimeGridMatrixFn::new(vec![0.0, 0.5, 1.0], vec![m(0.0), m(1.0), m(3.0)], Interp::Linear).unwrap();
    assert!((f.eval(0.25)[(0, 0)] - 0.5).abs() < 1e-15);
    assert!((f.eval(0.75)[(0, 0)] - 2.0).abs() < 1e-15);
    // continuity at interior nodes
    assert!((f.eval(0.5 - 1e-12)[(0, 0)] - f.eval(0.5 + 1e-12)[(0, 0)]).abs() < 1e-10);
}
