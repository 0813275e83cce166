//! Problem definition: least-squares residual blocks, nonlinear equality blocks,
//! affine inequality rows and per-variable bounds.
//!
//! Blocks address the decision vector through an explicit index list so that
//! evaluation stays local; the solver scatters block results into dense storage.

/// Callback filling an output slice from a local variable slice.
///
/// Residual/equality callbacks fill `dim` values; Jacobian callbacks fill the
/// row-major `dim x vars.len()` matrix.
pub type BlockFn = Box<dyn Fn(&[f64], &mut [f64])>;

/// One term of the least-squares objective: the solver minimizes the sum of
/// `||r_b(x)||^2` over all blocks. Weights belong inside the residual.
pub struct ResidualBlock {
    pub label: String,
    /// Shooting-stage index this block belongs to, for reporting only.
    pub stage: Option<usize>,
    /// Decision-variable indices read by this block.
    pub vars: Vec<usize>,
    pub dim: usize,
    pub func: BlockFn,
    pub jac: BlockFn,
}

/// Nonlinear equality constraint `c(x_local) = 0` (shooting-gap defects,
/// initial-state pins).
pub struct EqualityBlock {
    pub label: String,
    pub vars: Vec<usize>,
    pub dim: usize,
    pub func: BlockFn,
    pub jac: BlockFn,
}

/// Two-sided affine constraint `lower <= sum_j coeffs[j] * x[vars[j]] <= upper`.
pub struct LinearInequality {
    pub label: String,
    pub vars: Vec<usize>,
    pub coeffs: Vec<f64>,
    pub lower: f64,
    pub upper: f64,
}

impl LinearInequality {
    pub fn value(&self, x: &[f64]) -> f64 {
        self.vars
            .iter()
            .zip(&self.coeffs)
            .map(|(&i, c)| c * x[i])
            .sum()
    }
}

/// A dense constrained nonlinear least-squares problem.
pub struct NlpProblem {
    n_vars: usize,
    pub(crate) residuals: Vec<ResidualBlock>,
    pub(crate) equalities: Vec<EqualityBlock>,
    pub(crate) inequalities: Vec<LinearInequality>,
    /// Per-variable `(lower, upper)`; infinite when unbounded.
    pub(crate) bounds: Vec<(f64, f64)>,
}

impl NlpProblem {
    pub fn new(n_vars: usize) -> Self {
        Self {
            n_vars,
            residuals: Vec::new(),
            equalities: Vec::new(),
            inequalities: Vec::new(),
            bounds: vec![(f64::NEG_INFINITY, f64::INFINITY); n_vars],
        }
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    /// Total row count of all equality blocks.
    pub fn equality_dim(&self) -> usize {
        self.equalities.iter().map(|b| b.dim).sum()
    }

    pub fn residual_blocks(&self) -> &[ResidualBlock] {
        &self.residuals
    }

    pub fn equality_blocks(&self) -> &[EqualityBlock] {
        &self.equalities
    }

    pub fn inequality_rows(&self) -> &[LinearInequality] {
        &self.inequalities
    }

    pub fn variable_bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn add_residual_block(
        &mut self,
        label: impl Into<String>,
        stage: Option<usize>,
        vars: Vec<usize>,
        dim: usize,
        func: BlockFn,
        jac: BlockFn,
    ) {
        let label = label.into();
        self.check_vars(&label, &vars);
        assert!(dim > 0, "residual block {label} has zero dimension");
        self.residuals.push(ResidualBlock {
            label,
            stage,
            vars,
            dim,
            func,
            jac,
        });
    }

    pub fn add_equality_block(
        &mut self,
        label: impl Into<String>,
        vars: Vec<usize>,
        dim: usize,
        func: BlockFn,
        jac: BlockFn,
    ) {
        let label = label.into();
        self.check_vars(&label, &vars);
        assert!(dim > 0, "equality block {label} has zero dimension");
        self.equalities.push(EqualityBlock {
            label,
            vars,
            dim,
            func,
            jac,
        });
    }

    pub fn add_inequality(
        &mut self,
        label: impl Into<String>,
        vars: Vec<usize>,
        coeffs: Vec<f64>,
        lower: f64,
        upper: f64,
    ) {
        let label = label.into();
        self.check_vars(&label, &vars);
        assert_eq!(
            vars.len(),
            coeffs.len(),
            "inequality {label}: vars/coeffs length mismatch"
        );
        assert!(lower <= upper, "inequality {label}: lower > upper");
        self.inequalities.push(LinearInequality {
            label,
            vars,
            coeffs,
            lower,
            upper,
        });
    }

    pub fn set_bound(&mut self, var: usize, lower: f64, upper: f64) {
        assert!(var < self.n_vars, "bound on variable {var} out of range");
        assert!(lower <= upper, "bound on variable {var}: lower > upper");
        self.bounds[var] = (lower, upper);
    }

    fn check_vars(&self, label: &str, vars: &[usize]) {
        for &v in vars {
            assert!(v < self.n_vars, "block {label}: variable {v} out of range");
        }
    }

    /// Gathers the local variable values for a block.
    pub(crate) fn gather(&self, x: &[f64], vars: &[usize], out: &mut Vec<f64>) {
        out.clear();
        out.extend(vars.iter().map(|&i| x[i]));
    }
}
