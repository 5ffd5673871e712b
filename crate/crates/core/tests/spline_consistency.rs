mod common;

use common::*;
use monospline::fixture::example_sec6;
use monospline::kernel::build_kernel_table;
use monospline::linalg::Vector;
use monospline::problem::{assemble_cost, EqualityConstraint, EqualityKind, QpProblem};
use monospline::qpsolve::{solve, SolverOptions};
use monospline::spline::*;
use rand::Rng;

fn fixture_options(epsilon: f64) -> FitOptions {
    let fx = example_sec6().unwrap();
    FitOptions {
        epsilon: Some(epsilon),
        r: BoxBound::Fixed(fx.r),
        ..FitOptions::default()
    }
}

fn breaks(times: &[f64]) -> Vec<f64> {
    std::iter::once(0.0).chain(times.iter().copied()).collect()
}

/// `λ∫u² + Σ w_i (y(t_i) - α_i)²` with the integral done by quadrature.
fn quadrature_cost(curve: &SplineCurve, data: &monospline::problem::DataSet) -> f64 {
    let energy = integrate_piecewise(|t| curve.evaluate_u(t).unwrap().powi(2), &breaks(data.times()), 1e-12);
    let misfit: f64 = data
        .times()
        .iter()
        .zip(data.values())
        .zip(data.weights())
        .map(|((&t, a), w)| w * (curve.evaluate_y(t).unwrap() - a).powi(2))
        .sum();
    data.smoothing() * energy + misfit
}

#[test]
fn quadratic_form_reproduces_the_cost() {
    let fx = example_sec6().unwrap();
    let table = build_kernel_table(&fx.system, fx.data.times()).unwrap();
    let cost = assemble_cost(&table, &fx.data).unwrap();
    let qp = QpProblem::unconstrained(cost).unwrap();
    let mut rng = rng(31);
    for _ in 0..5 {
        let theta = Vector::from_fn(qp.dim(), |_, _| rng.random_range(-1.0..1.0));
        let curve = SplineCurve::new(fx.system.clone(), table.clone(), theta.clone()).unwrap();
        let j = quadrature_cost(&curve, &fx.data);
        let f = qp.objective(&theta) + qp.constant;
        assert!((f - j).abs() <= 1e-8 * (1.0 + j.abs()), "{f} vs {j}");
    }
}

#[test]
fn fitted_cost_matches_quadrature() {
    let fx = example_sec6().unwrap();
    let sol = fit(&fx.system, &fx.data, &fixture_options(1e-2)).unwrap();
    let j = quadrature_cost(&sol.curve, &fx.data);
    assert!(
        (sol.objective_j - j).abs() <= 1e-6 * j.abs(),
        "{} vs {j}",
        sol.objective_j
    );
}

#[test]
fn output_matches_simulated_state_equation() {
    let fx = example_sec6().unwrap();
    let sol = fit(&fx.system, &fx.data, &fixture_options(1e-2)).unwrap();
    let curve = &sol.curve;
    let times: Vec<f64> = (1..=700).map(|k| k as f64 / 100.0).collect();
    let sim = rk4_output(&fx.system, &curve.x0(), |t| curve.evaluate_u(t).unwrap(), &times, 0.01);
    let worst = times
        .iter()
        .zip(&sim)
        .map(|(&t, y)| (curve.evaluate_y(t).unwrap() - y).abs())
        .fold(0.0, f64::max);
    assert!(worst <= 1e-6, "worst = {worst}");
}

#[test]
fn derivative_matches_finite_differences_of_output() {
    let fx = example_sec6().unwrap();
    let sol = fit(&fx.system, &fx.data, &fixture_options(1e-2)).unwrap();
    let h = 1e-4;
    for k in 1..70 {
        let t = k as f64 / 10.0 + 0.0123;
        let fd = (sol.curve.evaluate_y(t + h).unwrap() - sol.curve.evaluate_y(t - h).unwrap()) / (2.0 * h);
        assert!((fd - sol.curve.evaluate_ydot(t).unwrap()).abs() <= 1e-4);
    }
}

#[test]
fn screened_solve_matches_full_solve() {
    let fx = example_sec6().unwrap();
    let opts = fixture_options(1e-2);
    let screened = fit(&fx.system, &fx.data, &opts).unwrap();
    let ConstraintGrid::Certified(plan) = &screened.grid else {
        unreachable!()
    };
    assert!(plan.grid().len() > DIRECT_SOLVE_MAX_ROWS);
    assert!(screened.working_rows < plan.grid().len());
    let full = fit(
        &fx.system,
        &fx.data,
        &FitOptions {
            screening: false,
            ..opts
        },
    )
    .unwrap();
    assert!((screened.objective_f - full.objective_f).abs() <= 1e-7 * (1.0 + full.objective_f.abs()));
    // θ is only weakly determined along a flat direction of P; the curve is not
    for k in 0..=70 {
        let t = k as f64 / 10.0;
        let (a, b) = (screened.curve.evaluate_y(t).unwrap(), full.curve.evaluate_y(t).unwrap());
        assert!((a - b).abs() <= 1e-5, "t = {t}: {a} vs {b}");
    }
    assert!(screened.kkt_residuals.max() <= 1e-8);
}

#[test]
fn propagation_matches_kernel_rows_on_fixture() {
    let fx = example_sec6().unwrap();
    let sol = fit(&fx.system, &fx.data, &fixture_options(1e-2)).unwrap();
    let mut worst: f64 = 0.0;
    ydot_on_uniform_grid(&sol.curve, 7 * 64 + 3, |k, t, y, ydot| {
        if k % 5 == 0 {
            worst = worst
                .max((y - sol.curve.evaluate_y(t).unwrap()).abs())
                .max((ydot - sol.curve.evaluate_ydot(t).unwrap()).abs());
        }
    })
    .unwrap();
    assert!(worst < 1e-10, "worst = {worst}");
}

#[test]
fn endpoint_conditions_are_met() {
    let fx = example_sec6().unwrap();
    let opts = FitOptions {
        equalities: vec![
            EqualityConstraint {
                kind: EqualityKind::Value,
                t: 7.0,
                target: 1.5,
            },
            EqualityConstraint {
                kind: EqualityKind::Derivative,
                t: 7.0,
                target: 0.0,
            },
        ],
        ..fixture_options(1e-2)
    };
    // ẏ(T) = 0 conflicts with the margin at t = T
    match fit(&fx.system, &fx.data, &opts) {
        Err(e) => assert!(matches!(e, monospline::Error::Infeasible(_)), "{e}"),
        Ok(sol) => panic!("expected infeasible, got {:?}", sol.status),
    }

    let opts = FitOptions {
        equalities: opts.equalities[..1].to_vec(),
        ..opts
    };
    let sol = fit(&fx.system, &fx.data, &opts).unwrap();
    assert!((sol.curve.evaluate_y(7.0).unwrap() - 1.5).abs() < 1e-7);
    assert!(sol.verification.feasible_everywhere);
}

#[test]
fn conventional_fit_respects_sample_points() {
    let fx = example_sec6().unwrap();
    let sol = solve_conventional(&fx.system, &fx.data, &FitOptions::default()).unwrap();
    for t in [0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0] {
        assert!(sol.curve.evaluate_ydot(t).unwrap() >= -1e-7);
    }
    assert!(sol.verification.grid_margin_ok);
}

#[test]
fn qp_survives_json_round_trip() {
    let fx = example_sec6().unwrap();
    let opts = FitOptions {
        epsilon: Some(0.1),
        r: BoxBound::Fixed(fx.r),
        ..FitOptions::default()
    };
    let qp = prepare(&fx.system, &fx.data, &opts).unwrap().full_qp().unwrap();
    let back = QpProblem::from_json(&qp.to_json().unwrap()).unwrap();
    assert_eq!(back, qp);
    let a = solve(&qp, &SolverOptions::default()).unwrap();
    let b = solve(&back, &SolverOptions::default()).unwrap();
    assert_eq!(a.theta, b.theta);
}
