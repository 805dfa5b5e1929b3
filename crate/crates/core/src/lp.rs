//! Dense tableau simplex for `min c.x  s.t.  A x <= b, x >= 0` with `b >= 0`.
//!
//! The slack basis is feasible for non-negative `b`, so a single phase
//! suffices. Bland's rule prevents cycling.

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum LpError {
    Infeasible,
    Unbounded,
    IterationLimit,
}

pub(crate) struct LpSolution {
    pub x: Vec<f64>,
    #[cfg_attr(not(test), allow(dead_code))]
    pub objective: f64,
}

const EPS: f64 = 1e-12;

/// `a` is row-major with `b.len()` rows and `c.len()` columns.
pub(crate) fn solve(c: &[f64], a: &[Vec<f64>], b: &[f64]) -> Result<LpSolution, LpError> {
    let n = c.len();
    let m = b.len();
    if b.iter().any(|&v| v < -EPS) || a.len() != m || a.iter().any(|r| r.len() != n) {
        return Err(LpError::Infeasible);
    }
    let width = n + m + 1;
    // rows 0..m constraints, row m is the objective (reduced costs)
    let mut t = vec![vec![0.0; width]; m + 1];
    for i in 0..m {
        t[i][..n].copy_from_slice(&a[i]);
        t[i][n + i] = 1.0;
        t[i][width - 1] = b[i].max(0.0);
    }
    t[m][..n].copy_from_slice(c);
    let mut basis: Vec<usize> = (n..n + m).collect();

    let max_iter = 50 * (n + m) + 100;
    for _ in 0..max_iter {
        // entering: lowest index with negative reduced cost
        let Some(col) = (0..n + m).find(|&j| t[m][j] < -EPS) else {
            let mut x = vec![0.0; n];
            for (i, &bv) in basis.iter().enumerate() {
                if bv < n {
                    x[bv] = t[i][width - 1];
                }
            }
            let objective = c.iter().zip(&x).map(|(ci, xi)| ci * xi).sum();
            return Ok(LpSolution { x, objective });
        };
        // leaving: minimum ratio, ties broken by lowest basis index
        let mut pivot: Option<(usize, f64)> = None;
        for i in 0..m {
            let aij = t[i][col];
            if aij > EPS {
                let ratio = t[i][width - 1] / aij;
                pivot = match pivot {
                    None => Some((i, ratio)),
                    Some((pi, pr)) => {
                        if ratio < pr - EPS || ((ratio - pr).abs() <= EPS && basis[i] < basis[pi]) {
                            Some((i, ratio))
                        } else {
                            Some((pi, pr))
                        }
                    }
                };
            }
        }
        let Some((row, _)) = pivot else {
            return Err(LpError::Unbounded);
        };
        let p = t[row][col];
        for v in t[row].iter_mut() {
            *v /= p;
        }
        let pivot_row = t[row].clone();
        for (i, r) in t.iter_mut().enumerate() {
            if i != row {
                let f = r[col];
                if f != 0.0 {
                    for (v, pv) in r.iter_mut().zip(&pivot_row) {
                        *v -= f * pv;
                    }
                }
            }
        }
        basis[row] = col;
    }
    Err(LpError::IterationLimit)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn textbook_problem() {
        // max 3x + 5y, x <= 4, 2y <= 12, 3x + 2y <= 18 -> (2, 6), 36
        let sol = solve(&[-3.0, -5.0], &[vec![1.0, 0.0], vec![0.0, 2.0], vec![3.0, 2.0]], &[4.0, 12.0, 18.0]).unwrap();
        assert!((sol.x[0] - 2.0).abs() < 1e-12 && (sol.x[1] - 6.0).abs() < 1e-12);
        assert!((sol.objective + 36.0).abs() < 1e-12);
    }

    #[test]
    fn unbounded_detected() {
        assert_eq!(solve(&[-1.0], &[vec![-1.0]], &[1.0]).err(), Some(LpError::Unbounded));
    }

    #[test]
    fn zero_rhs_degenerate() {
        let sol = solve(&[-1.0, -1.0], &[vec![1.0, -1.0], vec![-1.0, 1.0], vec![1.0, 1.0]], &[0.0, 0.0, 2.0]).unwrap();
        assert!((sol.objective + 2.0).abs() < 1e-12);
    }
}
