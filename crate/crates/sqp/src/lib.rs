//! A small dense SQP solver for constrained nonlinear least-squares problems
//! arising from direct multiple-shooting transcriptions.
//!
//! The objective is a sum of squared residual blocks; constraints are
//! nonlinear equalities (shooting defects), affine two-sided inequalities and
//! variable bounds. The solver uses a Gauss-Newton Hessian with a Levenberg
//! floor, null-space elimination of the equality constraints, a dual
//! active-set QP for the reduced subproblem, and an l1-merit backtracking
//! line search. Problems with a few hundred variables solve in milliseconds;
//! there is no sparse linear algebra and no interior-point path.

mod gradcheck;
mod nullspace;
mod problem;
mod qp;
mod solver;

pub use gradcheck::{check_gradients, BlockCheck, BlockKind, GradientReport};
pub use problem::{BlockFn, EqualityBlock, LinearInequality, NlpProblem, ResidualBlock};
pub use solver::{
    minimize, warm_start, Solution, SolveStatus, SolverOptions, SqpError, StageLayout,
};
