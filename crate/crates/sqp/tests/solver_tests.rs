//! End-to-end solver behavior on standard test problems.

use sqp::{
    check_gradients, minimize, warm_start, NlpProblem, SolveStatus, SolverOptions, StageLayout,
};

fn unconstrained_quadratic(center: Vec<f64>) -> NlpProblem {
    let n = center.len();
    let mut p = NlpProblem::new(n);
    p.add_residual_block(
        "quadratic",
        None,
        (0..n).collect(),
        n,
        Box::new(move |x, r| {
            for i in 0..x.len() {
                r[i] = x[i] - center[i];
            }
        }),
        Box::new(move |x, j| {
            let k = x.len();
            for v in j.iter_mut() {
                *v = 0.0;
            }
            for i in 0..k {
                j[i * k + i] = 1.0;
            }
        }),
    );
    p
}

fn rosenbrock() -> NlpProblem {
    // f = (1 - x)^2 + 100 (y - x^2)^2 as two residuals.
    let mut p = NlpProblem::new(2);
    p.add_residual_block(
        "rosenbrock",
        None,
        vec![0, 1],
        2,
        Box::new(|x, r| {
            r[0] = 1.0 - x[0];
            r[1] = 10.0 * (x[1] - x[0] * x[0]);
        }),
        Box::new(|x, j| {
            j[0] = -1.0;
            j[1] = 0.0;
            j[2] = -20.0 * x[0];
            j[3] = 10.0;
        }),
    );
    p
}

#[test]
fn quadratic_converges_in_two_iterations() {
    let p = unconstrained_quadratic(vec![1.0, -2.0, 3.5]);
    let sol = minimize(&p, &[10.0, 10.0, 10.0], &SolverOptions::default());
    assert_eq!(sol.status, SolveStatus::Converged);
    assert!(sol.iterations <= 2, "took {} iterations", sol.iterations);
    for (v, c) in sol.variables.iter().zip(&[1.0, -2.0, 3.5]) {
        assert!((v - c).abs() < 1e-7);
    }
}

#[test]
fn box_constrained_scalar() {
    // minimize (x - 2)^2 s.t. x <= 1  ->  x = 1.
    let mut p = unconstrained_quadratic(vec![2.0]);
    p.set_bound(0, f64::NEG_INFINITY, 1.0);
    let sol = minimize(&p, &[0.0], &SolverOptions::default());
    assert_eq!(sol.status, SolveStatus::Converged);
    assert!((sol.variables[0] - 1.0).abs() < 1e-8);
}

#[test]
fn rosenbrock_from_standard_start() {
    let p = rosenbrock();
    let sol = minimize(&p, &[-1.2, 1.0], &SolverOptions::default());
    assert_eq!(sol.status, SolveStatus::Converged);
    assert!((sol.variables[0] - 1.0).abs() < 1e-6);
    assert!((sol.variables[1] - 1.0).abs() < 1e-6);
    assert!(sol.objective < 1e-12);
}

#[test]
fn rosenbrock_gradients_check_out() {
    let p = rosenbrock();
    let report = check_gradients(&p, &[-0.7, 0.3], 1e-5);
    assert!(report.passes(), "max rel error {}", report.max_rel_error);
}

#[test]
fn linear_block_gradients_are_exact() {
    let mut p = NlpProblem::new(2);
    p.add_inequality("affine", vec![0, 1], vec![3.0, -4.0], -1.0, 5.0);
    let report = check_gradients(&p, &[0.3, 0.7], 1e-5);
    assert!(report.max_rel_error < 1e-10);
}

#[test]
fn equality_constrained_projection() {
    // min ||x||^2 s.t. x0 + x1 = 1 -> (0.5, 0.5).
    let mut p = unconstrained_quadratic(vec![0.0, 0.0]);
    p.add_equality_block(
        "sum",
        vec![0, 1],
        1,
        Box::new(|x, c| c[0] = x[0] + x[1] - 1.0),
        Box::new(|_, j| {
            j[0] = 1.0;
            j[1] = 1.0;
        }),
    );
    let sol = minimize(&p, &[3.0, -1.0], &SolverOptions::default());
    assert_eq!(sol.status, SolveStatus::Converged);
    assert!((sol.variables[0] - 0.5).abs() < 1e-8);
    assert!((sol.variables[1] - 0.5).abs() < 1e-8);
    assert!(sol.max_constraint_violation <= 1e-6);
}

#[test]
fn contradictory_constraints_report_infeasible() {
    let mut p = unconstrained_quadratic(vec![0.0]);
    p.add_inequality("ge_one", vec![0], vec![1.0], 1.0, f64::INFINITY);
    p.add_inequality("le_zero", vec![0], vec![1.0], f64::NEG_INFINITY, 0.0);
    let sol = minimize(&p, &[0.5], &SolverOptions::default());
    assert_eq!(sol.status, SolveStatus::Infeasible);
    assert!(sol.max_constraint_violation > 1e-6);
}

#[test]
fn non_finite_callback_is_reported() {
    let mut p = NlpProblem::new(1);
    p.add_residual_block(
        "exploding",
        None,
        vec![0],
        1,
        Box::new(|x, r| r[0] = (x[0] * 1e300) * 1e300),
        Box::new(|_, j| j[0] = f64::INFINITY),
    );
    let sol = minimize(&p, &[1.0], &SolverOptions::default());
    assert_eq!(sol.status, SolveStatus::NumericalFailure);
    let detail = sol.failure_detail.expect("failure detail");
    assert!(detail.contains("exploding"), "detail: {detail}");
}

#[test]
fn determinism_bitwise() {
    let run = || {
        let p = rosenbrock();
        minimize(&p, &[-1.2, 1.0], &SolverOptions::default())
    };
    let a = run();
    let b = run();
    assert_eq!(a.iterations, b.iterations);
    assert_eq!(a.objective.to_bits(), b.objective.to_bits());
    for (x, y) in a.variables.iter().zip(&b.variables) {
        assert_eq!(x.to_bits(), y.to_bits());
    }
}

#[test]
fn residual_scaling_leaves_argmin() {
    // Scaling all residual weights by s > 0 must not move the argmin of an
    // unconstrained problem beyond 10x the KKT tolerance.
    let build = |scale: f64| {
        let mut p = NlpProblem::new(2);
        p.add_residual_block(
            "scaled",
            None,
            vec![0, 1],
            2,
            Box::new(move |x, r| {
                r[0] = scale * (x[0] - 2.0 + 0.3 * x[1]);
                r[1] = scale * (x[1] + 1.0);
            }),
            Box::new(move |_, j| {
                j[0] = scale;
                j[1] = scale * 0.3;
                j[2] = 0.0;
                j[3] = scale;
            }),
        );
        p
    };
    let opts = SolverOptions::default();
    let a = minimize(&build(1.0), &[0.0, 0.0], &opts);
    let b = minimize(&build(50.0), &[0.0, 0.0], &opts);
    assert_eq!(a.status, SolveStatus::Converged);
    assert_eq!(b.status, SolveStatus::Converged);
    for (x, y) in a.variables.iter().zip(&b.variables) {
        assert!((x - y).abs() <= 10.0 * opts.kkt_tolerance);
    }
}

#[test]
fn iteration_trace_is_written() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.csv");
    let opts = SolverOptions {
        trace_path: Some(path.clone()),
        ..Default::default()
    };
    let p = rosenbrock();
    let sol = minimize(&p, &[-1.2, 1.0], &opts);
    assert_eq!(sol.status, SolveStatus::Converged);
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("iter,objective,kkt,violation,step_norm"));
    assert!(lines.count() >= 2);
}

#[test]
fn warm_start_shift_contract() {
    let layout = StageLayout {
        state_dim: 2,
        control_dim: 1,
        stages: 4,
    };
    let sol = ramp_solution(layout);

    // shift = 0 is out of contract.
    assert!(warm_start(&sol, &layout, 0).is_err());
    assert!(warm_start(&sol, &layout, 4).is_err());

    // Linear ramp: states k = [k, 10k], controls k = [100 + k].
    let shifted = warm_start(&sol, &layout, 1).unwrap();
    // states: 1,10, 2,20, 3,30, 3,30 then controls: 101, 102, 102
    let expect = [1.0, 10.0, 2.0, 20.0, 3.0, 30.0, 3.0, 30.0, 101.0, 102.0, 102.0];
    assert_eq!(shifted, expect);
}

#[test]
fn warm_start_constant_trajectory_is_identity() {
    let layout = StageLayout {
        state_dim: 3,
        control_dim: 2,
        stages: 5,
    };
    let vars = vec![7.0; layout.n_vars()];
    let sol = sqp::Solution {
        variables: vars.clone(),
        objective: 0.0,
        status: SolveStatus::Converged,
        iterations: 1,
        kkt_residual: 0.0,
        max_constraint_violation: 0.0,
        failure_detail: None,
    };
    assert_eq!(warm_start(&sol, &layout, 2).unwrap(), vars);
}

fn ramp_solution(layout: StageLayout) -> sqp::Solution {
    let mut vars = Vec::new();
    for k in 0..layout.stages {
        vars.push(k as f64);
        vars.push(10.0 * k as f64);
    }
    for k in 0..layout.stages - 1 {
        vars.push(100.0 + k as f64 + 1.0);
    }
    sqp::Solution {
        variables: vars,
        objective: 0.0,
        status: SolveStatus::Converged,
        iterations: 1,
        kkt_residual: 0.0,
        max_constraint_violation: 0.0,
        failure_detail: None,
    }
}
