//! Sequential quadratic programming over the problem of `problem.rs`.
//!
//! Each iteration builds a Gauss-Newton model of the least-squares objective,
//! eliminates the linearized equality constraints through the null-space
//! machinery, solves the reduced inequality-constrained QP with the dual
//! active-set method, and globalizes with a backtracking line search on an
//! l1 merit function. Infeasible subproblems fall back to a restoration
//! phase that minimizes constraint violation alone.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::nullspace::eliminate;
use crate::problem::NlpProblem;
use crate::qp::{solve_dual_active_set, QpStatus};

#[derive(Debug, thiserror::Error)]
pub enum SqpError {
    #[error("warm-start shift must satisfy 1 <= shift < {stages}, got {shift}")]
    ShiftOutOfRange { shift: usize, stages: usize },
    #[error("solution has {got} variables but the stage layout expects {expected}")]
    LayoutMismatch { expected: usize, got: usize },
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum SolveStatus {
    Converged,
    MaxIterations,
    Infeasible,
    NumericalFailure,
}

impl SolveStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolveStatus::Converged => "converged",
            SolveStatus::MaxIterations => "max_iterations",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::NumericalFailure => "numerical_failure",
        }
    }
}

#[derive(Clone, Debug)]
pub struct SolverOptions {
    pub max_iterations: usize,
    pub kkt_tolerance: f64,
    pub constraint_tolerance: f64,
    /// Backtracking contraction factor.
    pub line_search_contraction: f64,
    /// Armijo sufficient-decrease coefficient.
    pub line_search_sufficient_decrease: f64,
    /// Levenberg floor added to the Gauss-Newton Hessian.
    pub regularization_floor: f64,
    /// When set, appends `iter,objective,kkt,violation,step_norm` rows.
    pub trace_path: Option<PathBuf>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            kkt_tolerance: 1e-6,
            constraint_tolerance: 1e-6,
            line_search_contraction: 0.5,
            line_search_sufficient_decrease: 1e-4,
            regularization_floor: 1e-8,
            trace_path: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Solution {
    pub variables: Vec<f64>,
    pub objective: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub max_constraint_violation: f64,
    /// Names the failing block when `status == NumericalFailure`.
    pub failure_detail: Option<String>,
}

/// Variable layout `[x^1..x^N, u^1..u^{N-1}]` used by the warm start.
#[derive(Clone, Copy, Debug)]
pub struct StageLayout {
    pub state_dim: usize,
    pub control_dim: usize,
    pub stages: usize,
}

impl StageLayout {
    pub fn n_vars(&self) -> usize {
        self.state_dim * self.stages + self.control_dim * (self.stages - 1)
    }
}

/// Shifts a solved trajectory forward by `shift` stages, duplicating the
/// terminal stage to fill the tail.
pub fn warm_start(
    previous: &Solution,
    layout: &StageLayout,
    shift: usize,
) -> Result<Vec<f64>, SqpError> {
    let n_stages = layout.stages;
    if shift == 0 || shift >= n_stages {
        return Err(SqpError::ShiftOutOfRange {
            shift,
            stages: n_stages,
        });
    }
    if previous.variables.len() != layout.n_vars() {
        return Err(SqpError::LayoutMismatch {
            expected: layout.n_vars(),
            got: previous.variables.len(),
        });
    }
    let nx = layout.state_dim;
    let nu = layout.control_dim;
    let u_off = nx * n_stages;
    let mut out = Vec::with_capacity(previous.variables.len());
    for k in 0..n_stages {
        let src = (k + shift).min(n_stages - 1);
        out.extend_from_slice(&previous.variables[src * nx..(src + 1) * nx]);
    }
    for k in 0..n_stages - 1 {
        let src = (k + shift).min(n_stages - 2);
        out.extend_from_slice(&previous.variables[u_off + src * nu..u_off + (src + 1) * nu]);
    }
    Ok(out)
}

/// One-sided constraint `a' x >= bound` derived from an inequality side or a
/// variable bound; kept sparse as (vars, coeffs).
struct OneSidedRow {
    vars: Vec<usize>,
    coeffs: Vec<f64>,
    bound: f64,
}

impl OneSidedRow {
    fn value(&self, x: &[f64]) -> f64 {
        self.vars
            .iter()
            .zip(&self.coeffs)
            .map(|(&i, c)| c * x[i])
            .sum()
    }
    fn slack(&self, x: &[f64]) -> f64 {
        self.value(x) - self.bound
    }
}

fn one_sided_rows(problem: &NlpProblem) -> Vec<OneSidedRow> {
    let mut rows = Vec::new();
    for ineq in problem.inequality_rows() {
        if ineq.lower.is_finite() {
            rows.push(OneSidedRow {
                vars: ineq.vars.clone(),
                coeffs: ineq.coeffs.clone(),
                bound: ineq.lower,
            });
        }
        if ineq.upper.is_finite() {
            rows.push(OneSidedRow {
                vars: ineq.vars.clone(),
                coeffs: ineq.coeffs.iter().map(|c| -c).collect(),
                bound: -ineq.upper,
            });
        }
    }
    for (i, &(lo, hi)) in problem.variable_bounds().iter().enumerate() {
        if lo.is_finite() {
            rows.push(OneSidedRow {
                vars: vec![i],
                coeffs: vec![1.0],
                bound: lo,
            });
        }
        if hi.is_finite() {
            rows.push(OneSidedRow {
                vars: vec![i],
                coeffs: vec![-1.0],
                bound: -hi,
            });
        }
    }
    rows
}

/// Objective value, gradient and Gauss-Newton Hessian; `Err` carries the
/// label of a block that produced non-finite values.
fn eval_objective_model(
    problem: &NlpProblem,
    x: &[f64],
) -> Result<(f64, DVector<f64>, DMatrix<f64>), String> {
    let n = problem.n_vars();
    let mut f = 0.0;
    let mut grad = DVector::zeros(n);
    let mut hess = DMatrix::zeros(n, n);
    let mut local = Vec::new();
    for block in problem.residual_blocks() {
        problem.gather(x, &block.vars, &mut local);
        let k = block.vars.len();
        let mut r = vec![0.0; block.dim];
        let mut j = vec![0.0; block.dim * k];
        (block.func)(&local, &mut r);
        (block.jac)(&local, &mut j);
        if !(r.iter().all(|v| v.is_finite()) && j.iter().all(|v| v.is_finite())) {
            return Err(block.label.clone());
        }
        f += r.iter().map(|v| v * v).sum::<f64>();
        for c1 in 0..k {
            let g1 = block.vars[c1];
            let mut acc = 0.0;
            for row in 0..block.dim {
                acc += j[row * k + c1] * r[row];
            }
            grad[g1] += 2.0 * acc;
            for c2 in 0..k {
                let g2 = block.vars[c2];
                let mut h = 0.0;
                for row in 0..block.dim {
                    h += j[row * k + c1] * j[row * k + c2];
                }
                hess[(g1, g2)] += 2.0 * h;
            }
        }
    }
    if !f.is_finite() {
        return Err("objective".to_string());
    }
    Ok((f, grad, hess))
}

fn eval_objective_value(problem: &NlpProblem, x: &[f64]) -> Result<f64, String> {
    let mut f = 0.0;
    let mut local = Vec::new();
    for block in problem.residual_blocks() {
        problem.gather(x, &block.vars, &mut local);
        let mut r = vec![0.0; block.dim];
        (block.func)(&local, &mut r);
        if !r.iter().all(|v| v.is_finite()) {
            return Err(block.label.clone());
        }
        f += r.iter().map(|v| v * v).sum::<f64>();
    }
    Ok(f)
}

fn eval_equalities(
    problem: &NlpProblem,
    x: &[f64],
    with_jacobian: bool,
) -> Result<(DVector<f64>, Option<DMatrix<f64>>), String> {
    let m = problem.equality_dim();
    let n = problem.n_vars();
    let mut c = DVector::zeros(m);
    let mut a = with_jacobian.then(|| DMatrix::zeros(m, n));
    let mut local = Vec::new();
    let mut row0 = 0;
    for block in problem.equality_blocks() {
        problem.gather(x, &block.vars, &mut local);
        let k = block.vars.len();
        let mut val = vec![0.0; block.dim];
        (block.func)(&local, &mut val);
        if !val.iter().all(|v| v.is_finite()) {
            return Err(block.label.clone());
        }
        for (i, &v) in val.iter().enumerate() {
            c[row0 + i] = v;
        }
        if let Some(a) = a.as_mut() {
            let mut j = vec![0.0; block.dim * k];
            (block.jac)(&local, &mut j);
            if !j.iter().all(|v| v.is_finite()) {
                return Err(block.label.clone());
            }
            for i in 0..block.dim {
                for (cj, &var) in block.vars.iter().enumerate() {
                    a[(row0 + i, var)] = j[i * k + cj];
                }
            }
        }
        row0 += block.dim;
    }
    Ok((c, a))
}

/// (l1 violation, max violation) over equalities, inequality sides and bounds.
fn violations(c_eq: &DVector<f64>, rows: &[OneSidedRow], x: &[f64]) -> (f64, f64) {
    let mut l1 = 0.0;
    let mut linf = 0.0_f64;
    for &v in c_eq.iter() {
        l1 += v.abs();
        linf = linf.max(v.abs());
    }
    for row in rows {
        let h = (-row.slack(x)).max(0.0);
        l1 += h;
        linf = linf.max(h);
    }
    (l1, linf)
}

struct Trace {
    out: BufWriter<File>,
}

impl Trace {
    fn open(path: &PathBuf) -> Option<Trace> {
        let file = File::create(path).ok()?;
        let mut out = BufWriter::new(file);
        writeln!(out, "iter,objective,kkt,violation,step_norm").ok()?;
        Some(Trace { out })
    }
    fn row(&mut self, iter: usize, f: f64, kkt: f64, viol: f64, step: f64) {
        let _ = writeln!(self.out, "{iter},{f},{kkt},{viol},{step}");
    }
}

/// Minimizes the problem starting from `initial_guess`.
///
/// Deterministic: identical inputs and options produce bit-identical results.
pub fn minimize(problem: &NlpProblem, initial_guess: &[f64], opts: &SolverOptions) -> Solution {
    let n = problem.n_vars();
    assert!(opts.kkt_tolerance > 0.0 && opts.constraint_tolerance > 0.0);
    assert!(opts.regularization_floor > 0.0);

    let failure = |detail: String, x: &[f64]| Solution {
        variables: x.to_vec(),
        objective: f64::NAN,
        status: SolveStatus::NumericalFailure,
        iterations: 0,
        kkt_residual: f64::NAN,
        max_constraint_violation: f64::NAN,
        failure_detail: Some(detail),
    };

    if initial_guess.len() != n {
        return failure(
            format!("initial guess has {} variables, expected {n}", initial_guess.len()),
            initial_guess,
        );
    }

    // Start inside the variable box.
    let mut x: Vec<f64> = initial_guess
        .iter()
        .zip(problem.variable_bounds())
        .map(|(&v, &(lo, hi))| v.clamp(lo, hi))
        .collect();

    let rows = one_sided_rows(problem);
    let mut trace = opts.trace_path.as_ref().and_then(Trace::open);

    let mut reg = opts.regularization_floor;
    let mut rho = 1.0_f64; // l1 merit penalty
    let mut restoration_exhausted = false;
    let mut stagnant = 0usize;

    let mut iter = 0;
    while iter < opts.max_iterations {
        iter += 1;

        let (f, grad, mut hess) = match eval_objective_model(problem, &x) {
            Ok(v) => v,
            Err(label) => return failure(format!("residual block {label}"), &x),
        };
        let (c_eq, a_eq) = match eval_equalities(problem, &x, true) {
            Ok(v) => v,
            Err(label) => return failure(format!("equality block {label}"), &x),
        };
        let a_eq = a_eq.expect("jacobian requested");
        let (viol_l1, viol_max) = violations(&c_eq, &rows, &x);

        for i in 0..n {
            hess[(i, i)] += reg;
        }

        let elim = eliminate(&a_eq, &(-&c_eq));
        let elim = match elim {
            Some(e) => e,
            None => {
                // Inconsistent linearization: try to restore feasibility.
                let (restored, ok) = restoration(problem, &rows, &x, opts);
                x = restored;
                if !ok {
                    if restoration_exhausted {
                        return finish(
                            problem, &rows, x, SolveStatus::Infeasible, iter, f64::NAN,
                        );
                    }
                    restoration_exhausted = true;
                }
                continue;
            }
        };
        let z = &elim.basis;
        let d_p = &elim.particular;
        let nz = z.ncols();

        // Reduced QP data.
        let hz = &hess * z;
        let h_red = z.transpose() * &hz;
        let hdp = &hess * d_p;
        let g_full = &grad + &hdp;
        let g_red = z.transpose() * &g_full;

        let x_plus_dp: Vec<f64> = (0..n).map(|i| x[i] + d_p[i]).collect();
        let qp_rows: Vec<(DVector<f64>, f64)> = rows
            .iter()
            .map(|row| {
                let mut normal = DVector::zeros(nz);
                for (&var, &c) in row.vars.iter().zip(&row.coeffs) {
                    for j in 0..nz {
                        normal[j] += c * z[(var, j)];
                    }
                }
                (normal, row.bound - row.value(&x_plus_dp))
            })
            .collect();

        let qp = solve_dual_active_set(&h_red, &g_red, &qp_rows);
        match qp.status {
            QpStatus::Solved => {}
            QpStatus::Infeasible => {
                let (restored, ok) = restoration(problem, &rows, &x, opts);
                x = restored;
                if !ok {
                    if restoration_exhausted {
                        return finish(problem, &rows, x, SolveStatus::Infeasible, iter, f64::NAN);
                    }
                    restoration_exhausted = true;
                }
                continue;
            }
            QpStatus::Failed => {
                reg = (reg * 100.0).min(1e10);
                continue;
            }
        }

        // KKT residual at x with the fresh QP multipliers.
        let mut stat = grad.clone();
        let mut comp = 0.0_f64;
        for (row, &mu) in rows.iter().zip(&qp.multipliers) {
            for (&var, &c) in row.vars.iter().zip(&row.coeffs) {
                stat[var] -= mu * c;
            }
            comp = comp.max(mu * row.slack(&x).max(0.0) / (1.0 + mu));
        }
        let stat_red = z.transpose() * &stat;
        let kkt = stat_red.amax().max(comp);

        if kkt <= opts.kkt_tolerance && viol_max <= opts.constraint_tolerance {
            if let Some(t) = trace.as_mut() {
                t.row(iter, f, kkt, viol_max, 0.0);
            }
            return Solution {
                variables: x,
                objective: f,
                status: SolveStatus::Converged,
                iterations: iter,
                kkt_residual: kkt,
                max_constraint_violation: viol_max,
                failure_detail: None,
            };
        }

        // Full step in the original variables.
        let mut d = d_p.clone();
        d += z * &qp.w;
        let step_scale = d.amax();
        if step_scale < 1e-14 * (1.0 + x.iter().fold(0.0_f64, |m, v| m.max(v.abs()))) {
            stagnant += 1;
            reg = (reg * 100.0).min(1e10);
            if stagnant >= 3 {
                return finish(problem, &rows, x, SolveStatus::MaxIterations, iter, kkt);
            }
            continue;
        }
        stagnant = 0;

        // Merit penalty keeping the direction a descent direction.
        let gtd = grad.dot(&d);
        let mu_max = qp
            .multipliers
            .iter()
            .fold(0.0_f64, |m, &v| m.max(v.abs()));
        rho = rho.max(2.0 * mu_max + 1.0);
        if gtd > 0.0 && viol_l1 > 1e-14 {
            rho = rho.max(2.0 * gtd / viol_l1 + 1.0);
        }
        let merit0 = f + rho * viol_l1;
        let descent = gtd - rho * viol_l1;

        let mut t = 1.0;
        let mut accepted = false;
        let mut fail_label: Option<String> = None;
        let c1 = opts.line_search_sufficient_decrease;
        while t >= 2.0_f64.powi(-30) {
            let xt: Vec<f64> = (0..n).map(|i| x[i] + t * d[i]).collect();
            let ft = match eval_objective_value(problem, &xt) {
                Ok(v) => v,
                Err(label) => {
                    fail_label = Some(label);
                    t *= opts.line_search_contraction;
                    continue;
                }
            };
            let ct = match eval_equalities(problem, &xt, false) {
                Ok((c, _)) => c,
                Err(label) => {
                    fail_label = Some(label);
                    t *= opts.line_search_contraction;
                    continue;
                }
            };
            let (v1t, _) = violations(&ct, &rows, &xt);
            let merit_t = ft + rho * v1t;
            if merit_t <= merit0 + c1 * t * descent {
                debug_assert!(
                    merit_t <= merit0 + c1 * t * descent + 1e-9 * (1.0 + merit0.abs()),
                    "line search accepted a merit increase"
                );
                x = xt;
                accepted = true;
                break;
            }
            t *= opts.line_search_contraction;
        }

        if !accepted {
            if let Some(label) = fail_label {
                return failure(format!("residual/equality block {label}"), &x);
            }
            reg = (reg * 100.0).min(1e10);
            continue;
        }
        reg = (reg * 0.1).max(opts.regularization_floor);

        if let Some(tr) = trace.as_mut() {
            tr.row(iter, f, kkt, viol_max, t * step_scale);
        }
    }

    finish(problem, &rows, x, SolveStatus::MaxIterations, iter, f64::NAN)
}

/// Final evaluation of a non-converged point.
fn finish(
    problem: &NlpProblem,
    rows: &[OneSidedRow],
    x: Vec<f64>,
    status: SolveStatus,
    iterations: usize,
    kkt: f64,
) -> Solution {
    let objective = eval_objective_value(problem, &x).unwrap_or(f64::NAN);
    let viol = match eval_equalities(problem, &x, false) {
        Ok((c, _)) => violations(&c, rows, &x).1,
        Err(_) => f64::NAN,
    };
    Solution {
        variables: x,
        objective,
        status,
        iterations,
        kkt_residual: kkt,
        max_constraint_violation: viol,
        failure_detail: None,
    }
}

/// Gauss-Newton descent on the squared constraint violation alone.
/// Returns the improved point and whether it reached (half) the feasibility
/// tolerance.
fn restoration(
    problem: &NlpProblem,
    rows: &[OneSidedRow],
    x0: &[f64],
    opts: &SolverOptions,
) -> (Vec<f64>, bool) {
    let n = problem.n_vars();
    let mut x = x0.to_vec();
    let target = 0.5 * opts.constraint_tolerance;

    let measure = |x: &[f64]| -> Option<(f64, DVector<f64>)> {
        let (c, _) = eval_equalities(problem, x, false).ok()?;
        let m: f64 = c.iter().map(|v| v * v).sum::<f64>()
            + rows
                .iter()
                .map(|r| (-r.slack(x)).max(0.0).powi(2))
                .sum::<f64>();
        Some((m, c))
    };

    for _ in 0..40 {
        let (c, a) = match eval_equalities(problem, &x, true) {
            Ok(v) => v,
            Err(_) => return (x, false),
        };
        let a = a.expect("jacobian requested");
        let (_, viol_max) = violations(&c, rows, &x);
        if viol_max <= target {
            return (x, true);
        }

        // GN model of ||c||^2 + sum of active hinge^2.
        let mut h = a.transpose() * &a;
        let mut g = a.transpose() * &c;
        for row in rows {
            let hinge = -row.slack(&x);
            if hinge > 0.0 {
                for (&v1, &c1) in row.vars.iter().zip(&row.coeffs) {
                    g[v1] += -c1 * hinge;
                    for (&v2, &c2) in row.vars.iter().zip(&row.coeffs) {
                        h[(v1, v2)] += c1 * c2;
                    }
                }
            }
        }
        for i in 0..n {
            h[(i, i)] += 1e-8;
        }
        let step = match Cholesky::new(h) {
            Some(ch) => ch.solve(&(-&g)),
            None => return (x, false),
        };

        let (m0, _) = match measure(&x) {
            Some(v) => v,
            None => return (x, false),
        };
        let slope = 2.0 * g.dot(&step);
        let mut t = 1.0;
        let mut improved = false;
        while t >= 2.0_f64.powi(-20) {
            let xt: Vec<f64> = (0..n).map(|i| x[i] + t * step[i]).collect();
            if let Some((mt, _)) = measure(&xt) {
                if mt <= m0 + 1e-4 * t * slope {
                    x = xt;
                    improved = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !improved {
            return (x, false);
        }
    }
    let feasible = match eval_equalities(problem, &x, false) {
        Ok((c, _)) => violations(&c, rows, &x).1 <= target,
        Err(_) => false,
    };
    (x, feasible)
}
