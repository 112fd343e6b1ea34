//! Dense tableau simplex for `max c.x  s.t.  A x <= b, x >= 0` with `b >= 0`.
//!
//! The origin is always feasible for these problems, so no phase one is
//! needed. Rows are scaled to unit max-norm first. Dantzig pricing with a
//! switch to Bland's rule after a run of degenerate pivots. Badly scaled
//! problems can still end slightly infeasible; callers check with
//! [`feasible`].

const EPS: f64 = 1e-11;
const PIVOT_TOL: f64 = 1e-9;
const FEAS_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub(crate) struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
}

pub(crate) fn maximize(c: &[f64], a: &[Vec<f64>], b: &[f64]) -> LpSolution {
    let n = c.len();
    let m = b.len();
    debug_assert!(a.len() == m && b.iter().all(|&v| v >= 0.0));
    let width = n + m + 1;
    // Rows 0..m are constraints, row m is the objective (reduced costs negated).
    let mut t = vec![0.0; (m + 1) * width];
    for i in 0..m {
        let scale = a[i].iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        let scale = if scale > 0.0 { scale } else { 1.0 };
        let row = &mut t[i * width..(i + 1) * width];
        for (dst, src) in row[..n].iter_mut().zip(&a[i]) {
            *dst = src / scale;
        }
        row[n + i] = 1.0;
        row[width - 1] = b[i] / scale;
    }
    for j in 0..n {
        t[m * width + j] = -c[j];
    }
    let mut basis: Vec<usize> = (n..n + m).collect();

    let mut degenerate_run = 0usize;
    let max_iter = 50 * (n + m) + 1000;
    for _ in 0..max_iter {
        let obj = &t[m * width..(m + 1) * width];
        let bland = degenerate_run > 2 * (n + m);
        let mut enter = None;
        let mut best = -EPS;
        for j in 0..n + m {
            if obj[j] < best {
                enter = Some(j);
                if bland {
                    break;
                }
                best = obj[j];
            }
        }
        let Some(col) = enter else { break };

        // Harris ratio test: among rows within tolerance of the minimum
        // ratio, pivot on the largest entry.
        let mut limit = f64::INFINITY;
        for i in 0..m {
            let aij = t[i * width + col];
            if aij > PIVOT_TOL {
                limit = limit.min((t[i * width + width - 1] + FEAS_TOL) / aij);
            }
        }
        let mut leave: Option<usize> = None;
        let mut ratio = f64::INFINITY;
        let mut size = 0.0;
        for i in 0..m {
            let aij = t[i * width + col];
            if aij > PIVOT_TOL {
                let r = t[i * width + width - 1] / aij;
                if r <= limit && (aij > size || (aij == size && leave.is_some_and(|l| basis[i] < basis[l]))) {
                    size = aij;
                    ratio = r;
                    leave = Some(i);
                }
            }
        }
        // Bounded by construction in every caller; stop rather than loop.
        let Some(row) = leave else { break };
        if ratio.max(0.0) <= EPS {
            degenerate_run += 1;
        } else {
            degenerate_run = 0;
        }
        pivot(&mut t, width, m, row, col);
        basis[row] = col;
    }

    let mut x = vec![0.0; n];
    for (i, &bv) in basis.iter().enumerate() {
        if bv < n {
            x[bv] = t[i * width + width - 1].max(0.0);
        }
    }
    let objective = x.iter().zip(c).map(|(xi, ci)| xi * ci).sum();
    LpSolution { x, objective }
}

/// Whether `A x <= b` holds up to a relative round-off tolerance.
pub(crate) fn feasible(a: &[Vec<f64>], b: &[f64], x: &[f64]) -> bool {
    a.iter().zip(b).all(|(row, &bi)| {
        let mut lhs = 0.0;
        let mut mag = bi.abs();
        for (aij, xj) in row.iter().zip(x) {
            lhs += aij * xj;
            mag = mag.max((aij * xj).abs());
        }
        lhs <= bi + 1e-9 * (1.0 + mag)
    })
}

fn pivot(t: &mut [f64], width: usize, m: usize, row: usize, col: usize) {
    let p = t[row * width + col];
    for v in &mut t[row * width..(row + 1) * width] {
        *v /= p;
    }
    let pivot_row: Vec<f64> = t[row * width..(row + 1) * width].to_vec();
    for i in 0..=m {
        if i == row {
            continue;
        }
        let f = t[i * width + col];
        if f.abs() < 1e-15 {
            continue;
        }
        let r = &mut t[i * width..(i + 1) * width];
        for (v, pv) in r.iter_mut().zip(&pivot_row) {
            *v -= f * pv;
        }
        r[col] = 0.0;
        if i < m && r[width - 1] < 0.0 {
            r[width - 1] = 0.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn textbook_problem() {
        // max 3x + 5y s.t. x <= 4, 2y <= 12, 3x + 2y <= 18 -> (2, 6), 36
        let s = maximize(
            &[3.0, 5.0],
            &[vec![1.0, 0.0], vec![0.0, 2.0], vec![3.0, 2.0]],
            &[4.0, 12.0, 18.0],
        );
        assert!((s.objective - 36.0).abs() < 1e-9);
        assert!((s.x[0] - 2.0).abs() < 1e-9 && (s.x[1] - 6.0).abs() < 1e-9);
    }

    #[test]
    fn badly_scaled_rows_stay_feasible() {
        // max x + y s.t. 1e9 x - 1e-3 y <= 0, x + y <= 5, x <= 2
        let a = [vec![1e9, -1e-3], vec![1.0, 1.0], vec![1.0, 0.0]];
        let b = [0.0, 5.0, 2.0];
        let s = maximize(&[1.0, 1.0], &a, &b);
        assert!(feasible(&a, &b, &s.x));
        assert!((s.objective - 5.0).abs() < 1e-6);
    }

    #[test]
    fn degenerate_zero_rhs() {
        // max x + y s.t. x - y <= 0, x + y <= 2 -> 2
        let s = maximize(&[1.0, 1.0], &[vec![1.0, -1.0], vec![1.0, 1.0]], &[0.0, 2.0]);
        assert!((s.objective - 2.0).abs() < 1e-9);
        assert!(s.x[0] <= s.x[1] + 1e-9);
    }
}
