//! Dense two-phase simplex for the tiny linear programs behind polytope
//! boundedness certificates (per-coordinate support bounds). Problems have
//! a handful of variables and rows; Bland's rule avoids cycling.

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { value: f64, x: Vec<f64> },
    Unbounded,
    Infeasible,
}

const TOL: f64 = 1e-9;

/// Maximize `c' x` subject to `F x <= b` with `x` free.
///
/// Free variables are split as `x = xp - xn`, slacks appended, rows with
/// negative right-hand side normalized and given artificials for phase 1.
pub fn maximize(c: &[f64], f_rows: &[Vec<f64>], b: &[f64]) -> LpOutcome {
    let m = c.len();
    let p = f_rows.len();
    debug_assert!(f_rows.iter().all(|r| r.len() == m));
    debug_assert_eq!(b.len(), p);

    // Columns: xp(m) | xn(m) | slack(p) | artificial(<=p)
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(p);
    let mut rhs: Vec<f64> = Vec::with_capacity(p);
    let mut art_of_row: Vec<Option<usize>> = vec![None; p];
    let mut n_art = 0usize;
    for i in 0..p {
        let flip = b[i] < 0.0;
        let s = if flip { -1.0 } else { 1.0 };
        let mut row = vec![0.0; 2 * m + p];
        for j in 0..m {
            row[j] = s * f_rows[i][j];
            row[m + j] = -s * f_rows[i][j];
        }
        row[2 * m + i] = s; // slack
        rhs.push(s * b[i]);
        if flip {
            art_of_row[i] = Some(n_art);
            n_art += 1;
        }
        rows.push(row);
    }
    let n_total = 2 * m + p + n_art;
    for (i, row) in rows.iter_mut().enumerate() {
        row.resize(n_total, 0.0);
        if let Some(a) = art_of_row[i] {
            row[2 * m + p + a] = 1.0;
        }
    }
    // Initial basis: slack where rhs was nonnegative, artificial elsewhere.
    let mut basis: Vec<usize> = (0..p)
        .map(|i| match art_of_row[i] {
            Some(a) => 2 * m + p + a,
            None => 2 * m + i,
        })
        .collect();

    if n_art > 0 {
        // Phase 1: minimize the artificial sum == maximize its negation.
        let mut c1 = vec![0.0; n_total];
        for slot in c1.iter_mut().skip(2 * m + p) {
            *slot = -1.0;
        }
        match run_simplex(&mut rows, &mut rhs, &mut basis, &c1) {
            SimplexEnd::Optimal(val) => {
                if val < -TOL {
                    return LpOutcome::Infeasible;
                }
            }
            SimplexEnd::Unbounded => return LpOutcome::Infeasible,
        }
        // Pivot any artificial still in the basis out onto a real column.
        for i in 0..p {
            if basis[i] >= 2 * m + p {
                if let Some(j) = (0..2 * m + p).find(|&j| rows[i][j].abs() > TOL) {
                    pivot(&mut rows, &mut rhs, &mut basis, i, j);
                }
            }
        }
        for row in rows.iter_mut() {
            row.truncate(2 * m + p);
        }
    }

    let mut c2 = vec![0.0; 2 * m + p];
    for j in 0..m {
        c2[j] = c[j];
        c2[m + j] = -c[j];
    }
    match run_simplex(&mut rows, &mut rhs, &mut basis, &c2) {
        SimplexEnd::Optimal(value) => {
            let mut x = vec![0.0; m];
            for (i, &bj) in basis.iter().enumerate() {
                if bj < m {
                    x[bj] += rhs[i];
                } else if bj < 2 * m {
                    x[bj - m] -= rhs[i];
                }
            }
            LpOutcome::Optimal { value, x }
        }
        SimplexEnd::Unbounded => LpOutcome::Unbounded,
    }
}

enum SimplexEnd {
    Optimal(f64),
    Unbounded,
}

/// Maximizing simplex over `rows * vars = rhs`, `vars >= 0`, with the
/// given starting basis. Reduced costs are recomputed from the basis each
/// pass; problem sizes make this cheap.
fn run_simplex(
    rows: &mut [Vec<f64>],
    rhs: &mut [f64],
    basis: &mut [usize],
    c: &[f64],
) -> SimplexEnd {
    let p = rows.len();
    let n = c.len();
    loop {
        // Reduced costs r_j = c_j - c_B' B^{-1} A_j; tableau is kept in
        // B^{-1}A form so r_j = c_j - sum_i c_{basis_i} rows[i][j].
        let mut entering = None;
        for j in 0..n {
            let mut r = c[j];
            for i in 0..p {
                let cb = c[basis[i]];
                if cb != 0.0 {
                    r -= cb * rows[i][j];
                }
            }
            if r > TOL {
                entering = Some(j); // Bland: first improving index
                break;
            }
        }
        let Some(j) = entering else {
            let value: f64 = (0..p).map(|i| c[basis[i]] * rhs[i]).sum();
            return SimplexEnd::Optimal(value);
        };
        let mut leave: Option<(usize, f64)> = None;
        for i in 0..p {
            if rows[i][j] > TOL {
                let ratio = rhs[i] / rows[i][j];
                match leave {
                    None => leave = Some((i, ratio)),
                    Some((li, lr)) => {
                        if ratio < lr - TOL || (ratio < lr + TOL && basis[i] < basis[li]) {
                            leave = Some((i, ratio));
                        }
                    }
                }
            }
        }
        let Some((i, _)) = leave else {
            return SimplexEnd::Unbounded;
        };
        pivot(rows, rhs, basis, i, j);
    }
}

fn pivot(rows: &mut [Vec<f64>], rhs: &mut [f64], basis: &mut [usize], i: usize, j: usize) {
    let piv = rows[i][j];
    for v in rows[i].iter_mut() {
        *v /= piv;
    }
    rhs[i] /= piv;
    for r in 0..rows.len() {
        if r == i {
            continue;
        }
        let factor = rows[r][j];
        if factor == 0.0 {
            continue;
        }
        let (src, dst) = if r < i {
            let (a, b) = rows.split_at_mut(i);
            (&b[0], &mut a[r])
        } else {
            let (a, b) = rows.split_at_mut(r);
            (&a[i], &mut b[0])
        };
        for (d, s) in dst.iter_mut().zip(src.iter()) {
            *d -= factor * s;
        }
        rhs[r] -= factor * rhs[i];
    }
    basis[i] = j;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simple_box_bound() {
        // max x s.t. x <= 1, -x <= 2  ->  1 at x = 1
        let out = maximize(&[1.0], &[vec![1.0], vec![-1.0]], &[1.0, 2.0]);
        match out {
            LpOutcome::Optimal { value, x } => {
                assert!((value - 1.0).abs() < 1e-9);
                assert!((x[0] - 1.0).abs() < 1e-9);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn coupled_constraint() {
        // max x+y s.t. x<=1, y<=2, x+y<=2.5, x,y >= -10
        let f = vec![
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 1.0],
            vec![-1.0, 0.0],
            vec![0.0, -1.0],
        ];
        let b = vec![1.0, 2.0, 2.5, 10.0, 10.0];
        match maximize(&[1.0, 1.0], &f, &b) {
            LpOutcome::Optimal { value, .. } => assert!((value - 2.5).abs() < 1e-9),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn negative_rhs_needs_phase1() {
        // x >= 1 (i.e. -x <= -1), x <= 3: max -x -> -1.
        let out = maximize(&[-1.0], &[vec![-1.0], vec![1.0]], &[-1.0, 3.0]);
        match out {
            LpOutcome::Optimal { value, x } => {
                assert!((value + 1.0).abs() < 1e-9);
                assert!((x[0] - 1.0).abs() < 1e-9);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn detects_unbounded() {
        let out = maximize(&[1.0], &[vec![-1.0]], &[0.0]);
        assert_eq!(out, LpOutcome::Unbounded);
    }

    #[test]
    fn detects_infeasible() {
        // x <= -1 and -x <= 0 (x >= 0): empty.
        let out = maximize(&[1.0], &[vec![1.0], vec![-1.0]], &[-1.0, 0.0]);
        assert_eq!(out, LpOutcome::Infeasible);
    }

    #[test]
    fn two_dim_vertex() {
        // max y over the triangle y <= x, y <= 2 - x, y >= 0 -> 1 at (1,1).
        let f = vec![vec![-1.0, 1.0], vec![1.0, 1.0], vec![0.0, -1.0]];
        let b = vec![0.0, 2.0, 0.0];
        match maximize(&[0.0, 1.0], &f, &b) {
            LpOutcome::Optimal { value, x } => {
                assert!((value - 1.0).abs() < 1e-9);
                assert!((x[0] - 1.0).abs() < 1e-9 && (x[1] - 1.0).abs() < 1e-9);
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
