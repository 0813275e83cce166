//! Null-space elimination of the linearized equality constraints.
//!
//! Given `A d = rhs` with `A` of size `m x n` (m <= n, typically full row
//! rank), computes a particular solution and a basis of the null space via
//! Gaussian elimination with full pivoting. The basis carries an identity
//! sub-block on the free columns, so its smallest singular value is >= 1 and
//! the reduced Hessian inherits positive definiteness from the full one.

use nalgebra::{DMatrix, DVector};

pub(crate) struct Elimination {
    /// `d_p` with `A d_p = rhs`.
    pub particular: DVector<f64>,
    /// `Z` of size `n x (n - rank)` with `A Z = 0`.
    pub basis: DMatrix<f64>,
    #[cfg_attr(not(test), allow(dead_code))]
    pub rank: usize,
}

/// Returns `None` when the system is inconsistent (`rhs` outside the range of
/// a rank-deficient `A`); the caller falls back to feasibility restoration.
pub(crate) fn eliminate(a: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<Elimination> {
    let m = a.nrows();
    let n = a.ncols();
    debug_assert_eq!(rhs.len(), m);

    if m == 0 {
        return Some(Elimination {
            particular: DVector::zeros(n),
            basis: DMatrix::identity(n, n),
            rank: 0,
        });
    }

    let mut u = a.clone();
    let mut b = rhs.clone();
    // col_of[k] = original column currently stored at position k.
    let mut col_of: Vec<usize> = (0..n).collect();

    let scale = u.amax().max(1.0);
    let pivot_tol = scale * 1e-12;

    let mut rank = 0;
    for k in 0..m.min(n) {
        // Full pivot search over the remaining submatrix; ties resolve to the
        // lowest (column, row) scan order for determinism.
        let mut best = (k, k, 0.0_f64);
        for j in k..n {
            for i in k..m {
                let v = u[(i, j)].abs();
                if v > best.2 {
                    best = (i, j, v);
                }
            }
        }
        let (pi, pj, pv) = best;
        if pv <= pivot_tol {
            break;
        }
        if pi != k {
            u.swap_rows(k, pi);
            b.swap_rows(k, pi);
        }
        if pj != k {
            u.swap_columns(k, pj);
            col_of.swap(k, pj);
        }
        let piv = u[(k, k)];
        for i in (k + 1)..m {
            let f = u[(i, k)] / piv;
            if f == 0.0 {
                continue;
            }
            u[(i, k)] = 0.0;
            for j in (k + 1)..n {
                u[(i, j)] -= f * u[(k, j)];
            }
            b[i] -= f * b[k];
        }
        rank += 1;
    }

    // Consistency of the eliminated rows.
    let resid_tol = (scale + rhs.amax()) * 1e-9;
    for i in rank..m {
        if b[i].abs() > resid_tol {
            return None;
        }
    }

    let n_free = n - rank;

    // Back-substitution helper over the rank x rank upper-triangular block;
    // `extra` supplies the contribution of one fixed free column.
    let back_solve = |u: &DMatrix<f64>, rhs_head: &[f64]| -> Vec<f64> {
        let mut xb = vec![0.0; rank];
        for k in (0..rank).rev() {
            let mut s = rhs_head[k];
            for j in (k + 1)..rank {
                s -= u[(k, j)] * xb[j];
            }
            xb[k] = s / u[(k, k)];
        }
        xb
    };

    // Particular solution: free variables at zero.
    let head: Vec<f64> = (0..rank).map(|i| b[i]).collect();
    let xb = back_solve(&u, &head);
    let mut particular = DVector::zeros(n);
    for (k, &v) in xb.iter().enumerate() {
        particular[col_of[k]] = v;
    }

    // Null-space basis: one column per free variable.
    let mut basis = DMatrix::zeros(n, n_free);
    for f in 0..n_free {
        let fc = rank + f;
        let head: Vec<f64> = (0..rank).map(|i| -u[(i, fc)]).collect();
        let xb = back_solve(&u, &head);
        for (k, &v) in xb.iter().enumerate() {
            basis[(col_of[k], f)] = v;
        }
        basis[(col_of[fc], f)] = 1.0;
    }

    Some(Elimination {
        particular,
        basis,
        rank,
    })
}
