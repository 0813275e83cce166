//! Dense dual active-set solver for strictly convex QPs with one-sided
//! inequality rows, after the equality constraints have been eliminated.
//!
//! Starts from the unconstrained minimizer and adds the most violated
//! constraint one at a time, taking primal/dual steps and dropping blocking
//! constraints, in the manner of Goldfarb and Idnani's dual method.

use nalgebra::{Cholesky, DMatrix, DVector};

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub(crate) enum QpStatus {
    Solved,
    Infeasible,
    Failed,
}

pub(crate) struct QpResult {
    pub w: DVector<f64>,
    /// One multiplier per input row (zero for inactive rows).
    pub multipliers: Vec<f64>,
    pub status: QpStatus,
}

/// Minimizes `0.5 w' H w + g' w` subject to `a_i' w >= b_i` for every row.
/// `H` must be positive definite.
pub(crate) fn solve_dual_active_set(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    rows: &[(DVector<f64>, f64)],
) -> QpResult {
    let n = g.len();
    let fail = |status: QpStatus, w: DVector<f64>| QpResult {
        w,
        multipliers: vec![0.0; rows.len()],
        status,
    };

    let chol = match Cholesky::new(h.clone()) {
        Some(c) => c,
        None => return fail(QpStatus::Failed, DVector::zeros(n)),
    };

    let mut w = chol.solve(&(-g));
    let mut active: Vec<usize> = Vec::new();
    let mut mult: Vec<f64> = Vec::new();
    // Cached H^{-1} a_i for the active rows.
    let mut hinv_act: Vec<DVector<f64>> = Vec::new();

    let feas_tol = |b: f64| 1e-9 * (1.0 + b.abs());
    let max_outer = 50 + 10 * rows.len();

    for _ in 0..max_outer {
        // Most violated inactive constraint; ties resolve to the lowest index.
        let mut pick: Option<(usize, f64)> = None;
        for (i, (a, b)) in rows.iter().enumerate() {
            if active.contains(&i) {
                continue;
            }
            let s = a.dot(&w) - b;
            if s < -feas_tol(*b) && pick.map_or(true, |(_, sv)| s < sv) {
                pick = Some((i, s));
            }
        }
        let (p, mut s_p) = match pick {
            Some(v) => v,
            None => {
                let mut multipliers = vec![0.0; rows.len()];
                for (k, &i) in active.iter().enumerate() {
                    multipliers[i] = mult[k];
                }
                return QpResult {
                    w,
                    multipliers,
                    status: QpStatus::Solved,
                };
            }
        };

        let a_p = &rows[p].0;
        let mut u_plus = mult.clone();
        u_plus.push(0.0);

        let max_inner = active.len() + rows.len() + 2;
        let mut added = false;
        for _ in 0..max_inner {
            let q = active.len();
            let hinv_a = chol.solve(a_p);
            let curvature = a_p.dot(&hinv_a);

            // Primal direction z = projection of H^{-1} a_p onto the null
            // space of the active normals; r = multiplier sensitivities.
            let (z, r) = if q > 0 {
                let mut m = DMatrix::zeros(q, q);
                let mut rhs = DVector::zeros(q);
                for i in 0..q {
                    rhs[i] = rows[active[i]].0.dot(&hinv_a);
                    for j in 0..q {
                        m[(i, j)] = rows[active[i]].0.dot(&hinv_act[j]);
                    }
                }
                let r = match m.lu().solve(&rhs) {
                    Some(r) => r,
                    None => return fail(QpStatus::Failed, w),
                };
                let mut z = hinv_a.clone();
                for j in 0..q {
                    z.axpy(-r[j], &hinv_act[j], 1.0);
                }
                (z, r)
            } else {
                (hinv_a.clone(), DVector::zeros(0))
            };

            let denom = z.dot(a_p);
            let step_in_primal = denom > 1e-11 * (1.0 + curvature.abs());

            // Dual blocking step over active rows with positive sensitivity.
            let mut t1 = f64::INFINITY;
            let mut block: Option<usize> = None;
            for j in 0..q {
                if r[j] > 1e-12 {
                    let cand = u_plus[j] / r[j];
                    if cand < t1 {
                        t1 = cand;
                        block = Some(j);
                    }
                }
            }
            let t2 = if step_in_primal {
                -s_p / denom
            } else {
                f64::INFINITY
            };

            if !step_in_primal && block.is_none() {
                // Constraint p cannot be satisfied: dual unbounded.
                return fail(QpStatus::Infeasible, w);
            }

            let t = t1.min(t2).max(0.0);

            if step_in_primal {
                w.axpy(t, &z, 1.0);
            }
            for j in 0..q {
                u_plus[j] -= t * r[j];
            }
            u_plus[q] += t;
            s_p = a_p.dot(&w) - rows[p].1;

            if step_in_primal && t2 <= t1 {
                active.push(p);
                hinv_act.push(hinv_a);
                mult = u_plus;
                added = true;
                break;
            }

            // Blocking constraint leaves the active set; retry.
            let k = block.expect("dual step requires a blocking constraint");
            active.remove(k);
            hinv_act.remove(k);
            u_plus.remove(k);
        }
        if !added {
            return fail(QpStatus::Failed, w);
        }
    }
    fail(QpStatus::Failed, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows_from(raw: &[(&[f64], f64)]) -> Vec<(DVector<f64>, f64)> {
        raw.iter()
            .map(|(a, b)| (DVector::from_row_slice(a), *b))
            .collect()
    }

    #[test]
    fn unconstrained_minimum() {
        let h = DMatrix::identity(2, 2);
        let g = DVector::from_row_slice(&[-2.0, -4.0]);
        let res = solve_dual_active_set(&h, &g, &[]);
        assert_eq!(res.status, QpStatus::Solved);
        assert!((res.w[0] - 2.0).abs() < 1e-12);
        assert!((res.w[1] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn single_active_bound() {
        // min 0.5||w - (2,0)||^2 s.t. -w_0 >= -1  (w_0 <= 1)
        let h = DMatrix::identity(2, 2);
        let g = DVector::from_row_slice(&[-2.0, 0.0]);
        let rows = rows_from(&[(&[-1.0, 0.0], -1.0)]);
        let res = solve_dual_active_set(&h, &g, &rows);
        assert_eq!(res.status, QpStatus::Solved);
        assert!((res.w[0] - 1.0).abs() < 1e-10);
        assert!(res.w[1].abs() < 1e-12);
        // Stationarity: (w - c) = mu * a  =>  mu = 1.
        assert!((res.multipliers[0] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn textbook_qp() {
        // min 0.5 w'Hw + g'w, H = [[1,0],[0,1]], g = (1, 0),
        // s.t. w_0 + 2 w_1 >= 1. Lagrangian solution: w = -g + mu a with
        // a'w = 1 => mu = (1 + a'g)/||a||^2 = (1 + 1)/5 = 0.4,
        // w = (-1 + 0.4, 0.8) = (-0.6, 0.8).
        let h = DMatrix::identity(2, 2);
        let g = DVector::from_row_slice(&[1.0, 0.0]);
        let rows = rows_from(&[(&[1.0, 2.0], 1.0)]);
        let res = solve_dual_active_set(&h, &g, &rows);
        assert_eq!(res.status, QpStatus::Solved);
        assert!((res.w[0] + 0.6).abs() < 1e-10);
        assert!((res.w[1] - 0.8).abs() < 1e-10);
        assert!((res.multipliers[0] - 0.4).abs() < 1e-10);
    }

    #[test]
    fn drops_blocking_constraint() {
        // Two constraints where the second activation forces the first out.
        // min 0.5||w||^2 - w_0  s.t. w_0 <= 0.5, w_0 + w_1 >= 1.
        let h = DMatrix::identity(2, 2);
        let g = DVector::from_row_slice(&[-1.0, 0.0]);
        let rows = rows_from(&[(&[-1.0, 0.0], -0.5), (&[1.0, 1.0], 1.0)]);
        let res = solve_dual_active_set(&h, &g, &rows);
        assert_eq!(res.status, QpStatus::Solved);
        assert!(res.w[0] <= 0.5 + 1e-9);
        assert!(res.w[0] + res.w[1] >= 1.0 - 1e-9);
    }

    #[test]
    fn reports_infeasible() {
        // w_0 >= 1 and -w_0 >= 0 cannot both hold.
        let h = DMatrix::identity(1, 1);
        let g = DVector::from_row_slice(&[0.0]);
        let rows = rows_from(&[(&[1.0], 1.0), (&[-1.0], 0.0)]);
        let res = solve_dual_active_set(&h, &g, &rows);
        assert_eq!(res.status, QpStatus::Infeasible);
    }
}
