mod common;

use clq::riccati::{eta_profile, RiccatiBundle};
use clq::synthesis::{
    cost_under_lambda, flow_state, simulate_closed_loop, solve_weighted, value_function, FeedbackLaw,
};
use clq::{LambdaWeights, ProblemSpec, SolverOptions};
use common::*;
use nalgebra::DVector;
use rand::Rng;

fn random_cases(seed: u64, count: usize) -> Vec<(ProblemSpec, LambdaWeights)> {
    let mut r = rng(seed);
    (0..count)
        .map(|j| {
            let shape = Shape {
                n: r.random_range(1..=3),
                m: r.random_range(1..=2),
                k: j % 2,
                time_varying: j % 3 != 0,
            };
            let spec = random_spec(&mut r, shape);
            let lam = LambdaWeights::new((0..shape.k).map(|_| r.random_range(0.0..2.0)).collect()).unwrap();
            (spec, lam)
        })
        .collect()
}

#[test]
fn simulated_cost_matches_value() {
    let opts = SolverOptions::default();
    for (j, (spec, lam)) in random_cases(31, 12).into_iter().enumerate() {
        let v = value_function(&spec, &lam, &opts).unwrap();
        let (_, traj) = solve_weighted(&spec, &lam, &opts).unwrap();
        let cost = cost_under_lambda(&lam, &traj);
        assert!(
            (cost - v).abs() <= 1e-3 * (1.0 + v.abs()),
            "case {j}: n={} m={} cost {cost:.8} value {v:.8}",
            spec.n(),
            spec.m()
        );
        assert!(traj.terminal_miss <= opts.miss_tol * (1.0 + spec.y().norm()));
        assert_eq!(traj.times.first(), Some(&spec.t0()));
        assert_eq!(traj.times.last(), Some(&spec.horizon()));
        assert!(traj.times.windows(2).all(|w| w[0] < w[1]));
    }
}

#[test]
fn single_input_chains_reach_the_target() {
    // several states behind one input make Σ nearly singular close to T
    let opts = SolverOptions::default();
    let mut r = rng(32);
    for n in 2..=3 {
        for tv in [false, true] {
            let spec = random_spec(
                &mut r,
                Shape {
                    n,
                    m: 1,
                    k: 0,
                    time_varying: tv,
                },
            );
            let none = LambdaWeights::zeros(0);
            let (law, traj) = solve_weighted(&spec, &none, &opts).unwrap();
            assert!(law.feedback_end() <= law.standoff_end());
            let v = value_function(&spec, &none, &opts).unwrap();
            assert!((traj.functionals[0] - v).abs() <= 1e-3 * (1.0 + v), "n={n} J={} V={v}", traj.functionals[0]);
        }
    }
}

#[test]
fn boundary_slices() {
    let opts = SolverOptions::default();
    let none = LambdaWeights::zeros(0);
    let mut r = rng(33);
    for n in 1..=2 {
        let base = random_spec(
            &mut r,
            Shape {
                n,
                m: 2,
                k: 0,
                time_varying: true,
            },
        );
        let bundle = RiccatiBundle::solve(&base, &none, &opts).unwrap();
        let (x, y) = (base.x().clone(), base.y().clone());
        let zero = DVector::zeros(n);

        let to_rest = base.clone().with_boundary(x.clone(), zero.clone()).unwrap();
        let expect = x.dot(&(bundle.p(0.0).unwrap() * &x));
        let v = value_function(&to_rest, &none, &opts).unwrap();
        assert!((v - expect).abs() <= 1e-9 * expect);
        let (_, traj) = solve_weighted(&to_rest, &none, &opts).unwrap();
        assert!((traj.functionals[0] - v).abs() <= 1e-3 * (1.0 + v));

        let from_rest = base.clone().with_boundary(zero.clone(), y.clone()).unwrap();
        let expect = y.dot(&(bundle.pi(1.0).unwrap() * &y));
        let v = value_function(&from_rest, &none, &opts).unwrap();
        assert!((v - expect).abs() <= 1e-9 * expect);
        let (_, traj) = solve_weighted(&from_rest, &none, &opts).unwrap();
        assert!((traj.functionals[0] - v).abs() <= 1e-3 * (1.0 + v));

        let idle = base.with_boundary(zero.clone(), zero).unwrap();
        assert_eq!(value_function(&idle, &none, &opts).unwrap(), 0.0);
        let (_, traj) = solve_weighted(&idle, &none, &opts).unwrap();
        assert!(traj.controls.iter().all(|u| u.amax() == 0.0));
    }
}

#[test]
fn standoff_gap_shrinks_with_eps() {
    let spec = example_one(1.0, 0.5);
    let none = LambdaWeights::zeros(0);
    let gap = |eps: f64| {
        let opts = SolverOptions {
            eps_t: Some(eps),
            ..SolverOptions::default()
        };
        solve_weighted(&spec, &none, &opts).unwrap().1.standoff_gap
    };
    let scale = spec.x().norm() + spec.y().norm();
    let mut prev = f64::INFINITY;
    for eps in [4e-3, 2e-3, 1e-3, 5e-4] {
        let g = gap(eps);
        assert!(g <= 10.0 * eps * scale, "eps={eps} gap={g:.3e}");
        assert!(prev / g >= 1.8, "eps={eps} gap={g:.3e} prev={prev:.3e}");
        prev = g;
    }
}

#[test]
fn target_enters_linearly() {
    let opts = SolverOptions::default();
    let none = LambdaWeights::zeros(0);
    let spec = random_spec(
        &mut rng(34),
        Shape {
            n: 2,
            m: 1,
            k: 0,
            time_varying: true,
        },
    );
    let bundle = RiccatiBundle::solve(&spec, &none, &opts).unwrap();
    let law = |y: DVector<f64>| FeedbackLaw::from_bundle(bundle.clone(), y, &opts).unwrap();
    let (y1, y2) = (DVector::from_row_slice(&[1.0, -0.5]), DVector::from_row_slice(&[0.3, 2.0]));
    let (l1, l2, l12) = (law(y1.clone()), law(y2.clone()), law(&y1 + &y2));
    let (x1, x2) = (DVector::from_row_slice(&[0.2, 0.7]), DVector::from_row_slice(&[-1.0, 0.4]));
    for s in [0.0, 0.4, 0.8, l1.feedback_end()] {
        let sum = l1.control(s, &x1).unwrap() + l2.control(s, &x2).unwrap();
        let joint = l12.control(s, &(&x1 + &x2)).unwrap();
        assert!((&joint - &sum).norm() <= 1e-9 * (1.0 + joint.norm()), "s={s}");
    }
    assert!((l12.target(1.0) - (&y1 + &y2)).amax() == 0.0);
}

#[test]
fn target_path_agrees_with_flow_path() {
    let opts = SolverOptions::default();
    for (j, (spec, lam)) in random_cases(35, 6).into_iter().enumerate() {
        let law = FeedbackLaw::new(&spec, &lam, &opts).unwrap();
        let via_flows = eta_profile(&law.bundle, spec.y());
        let end = law.feedback_end();
        for k in 0..=20 {
            let s = 0.9 * end * k as f64 / 20.0;
            let a = law.eta(s).unwrap();
            let b = via_flows.eval(s).unwrap();
            assert!((&a - &b).norm() <= 1e-6 * (1.0 + a.norm()), "case {j} s={s} {a} {b}");
        }
        let traj = simulate_closed_loop(&spec, &law, &opts).unwrap();
        let times: Vec<f64> = traj.times.iter().copied().filter(|&s| s <= end).step_by(97).collect();
        let flow = flow_state(&law, spec.x(), &times, &opts).unwrap();
        for (s, x) in times.iter().zip(&flow) {
            let i = traj.times.iter().position(|t| t == s).unwrap();
            let err = (x - &traj.states[i]).norm();
            assert!(err <= 1e-5 * (1.0 + x.norm()), "case {j} s={s} err={err:.3e}");
        }
    }
}

#[test]
fn example_two_control_has_closed_form() {
    let opts = SolverOptions::default();
    let lam_star = 0.1869327;
    let spec = example_two();
    let lam = LambdaWeights::new(vec![lam_star]).unwrap();
    let (law, traj) = solve_weighted(&spec, &lam, &opts).unwrap();
    // X = sinh(α(1−s))/sinh α with α² = 1 + 15/(1+λ), u = X' − X
    let alpha = (1.0 + 15.0 / (1.0 + lam_star)).sqrt();
    let exact = |s: f64| -(alpha * (alpha * (1.0 - s)).cosh() + (alpha * (1.0 - s)).sinh()) / alpha.sinh();
    for (s, u) in traj.times.iter().zip(&traj.controls) {
        if *s <= law.standoff_end() {
            assert!((u[0] - exact(*s)).abs() <= 1e-5 * (1.0 + exact(*s).abs()), "s={s}");
        }
    }
    assert!((traj.functionals[1] - 3.0).abs() <= 1e-2);
}

#[test]
fn drift_reachable_target_needs_no_control() {
    let opts = SolverOptions::default();
    let spec = example_one(1.0, E);
    let none = LambdaWeights::zeros(0);
    let v = value_function(&spec, &none, &opts).unwrap();
    // three O(1) terms cancel, so the residue is at the integration tolerance
    assert!(v.abs() <= 1e-7, "V={v:.3e}");
    let (_, traj) = solve_weighted(&spec, &none, &opts).unwrap();
    assert!(traj.controls.iter().all(|u| u[0].abs() <= 1e-6), "max {:?}", traj.controls.iter().map(|u| u[0].abs()).fold(0.0, f64::max));
    assert!(traj.functionals[0] <= 1e-10);
}
