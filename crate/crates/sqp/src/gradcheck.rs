//! Central finite-difference verification of all analytic Jacobians.

use crate::problem::NlpProblem;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum BlockKind {
    Residual,
    Equality,
    Inequality,
}

impl BlockKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            BlockKind::Residual => "residual",
            BlockKind::Equality => "equality",
            BlockKind::Inequality => "inequality",
        }
    }
}

#[derive(Clone, Debug)]
pub struct BlockCheck {
    pub label: String,
    pub kind: BlockKind,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradientReport {
    pub checks: Vec<BlockCheck>,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl GradientReport {
    pub fn passes(&self) -> bool {
        self.max_rel_error < self.tolerance
    }

    /// Worst block first.
    pub fn worst(&self) -> Option<&BlockCheck> {
        self.checks
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

/// Central difference of one block callback in its local coordinates, with
/// step `h_i = 1e-6 * (1 + |x_i|)`.
fn fd_jacobian(
    func: &dyn Fn(&[f64], &mut [f64]),
    local: &[f64],
    dim: usize,
) -> Vec<f64> {
    let k = local.len();
    let mut jac = vec![0.0; dim * k];
    let mut plus = vec![0.0; dim];
    let mut minus = vec![0.0; dim];
    let mut pt = local.to_vec();
    for j in 0..k {
        let h = 1e-6 * (1.0 + local[j].abs());
        pt[j] = local[j] + h;
        func(&pt, &mut plus);
        pt[j] = local[j] - h;
        func(&pt, &mut minus);
        pt[j] = local[j];
        for i in 0..dim {
            jac[i * k + j] = (plus[i] - minus[i]) / (2.0 * h);
        }
    }
    jac
}

/// Compares the analytic Jacobian of every residual, equality, and affine
/// inequality block against central finite differences at `point`.
pub fn check_gradients(problem: &NlpProblem, point: &[f64], tol: f64) -> GradientReport {
    assert_eq!(point.len(), problem.n_vars());
    let mut checks = Vec::new();
    let mut local = Vec::new();

    for block in problem.residual_blocks() {
        problem.gather(point, &block.vars, &mut local);
        let k = block.vars.len();
        let mut analytic = vec![0.0; block.dim * k];
        (block.jac)(&local, &mut analytic);
        let numeric = fd_jacobian(block.func.as_ref(), &local, block.dim);
        let max = analytic
            .iter()
            .zip(&numeric)
            .map(|(&a, &n)| rel_err(a, n))
            .fold(0.0_f64, f64::max);
        checks.push(BlockCheck {
            label: block.label.clone(),
            kind: BlockKind::Residual,
            max_rel_error: max,
        });
    }

    for block in problem.equality_blocks() {
        problem.gather(point, &block.vars, &mut local);
        let k = block.vars.len();
        let mut analytic = vec![0.0; block.dim * k];
        (block.jac)(&local, &mut analytic);
        let numeric = fd_jacobian(block.func.as_ref(), &local, block.dim);
        let max = analytic
            .iter()
            .zip(&numeric)
            .map(|(&a, &n)| rel_err(a, n))
            .fold(0.0_f64, f64::max);
        checks.push(BlockCheck {
            label: block.label.clone(),
            kind: BlockKind::Equality,
            max_rel_error: max,
        });
    }

    for ineq in problem.inequality_rows() {
        problem.gather(point, &ineq.vars, &mut local);
        let coeffs = ineq.coeffs.clone();
        let value = move |loc: &[f64], out: &mut [f64]| {
            out[0] = loc.iter().zip(&coeffs).map(|(x, c)| x * c).sum();
        };
        let numeric = fd_jacobian(&value, &local, 1);
        let max = ineq
            .coeffs
            .iter()
            .zip(&numeric)
            .map(|(&a, &n)| rel_err(a, n))
            .fold(0.0_f64, f64::max);
        checks.push(BlockCheck {
            label: ineq.label.clone(),
            kind: BlockKind::Inequality,
            max_rel_error: max,
        });
    }

    let max_rel_error = checks
        .iter()
        .map(|c| c.max_rel_error)
        .fold(0.0_f64, f64::max);
    GradientReport {
        checks,
        max_rel_error,
        tolerance: tol,
    }
}
