//! Phase-one simplex for small dense feasibility problems `A x = b, x >= 0`.

const PIVOT_EPS: f64 = 1e-12;
const MAX_PIVOTS: usize = 100_000;

/// A nonnegative solution of `A x = b` (rows of `a` are equations), if one exists
/// with total artificial slack at most `tol`.
pub(crate) fn nonnegative_solution(a: &[Vec<f64>], b: &[f64], tol: f64) -> Option<Vec<f64>> {
    let m = a.len();
    let n = a.first().map_or(0, Vec::len);
    let width = n + m + 1;
    let rhs = width - 1;
    let mut t = vec![vec![0.0; width]; m + 1];
    for i in 0..m {
        let sign = if b[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            t[i][j] = sign * a[i][j];
        }
        t[i][n + i] = 1.0;
        t[i][rhs] = sign * b[i];
    }
    for j in (0..n).chain(std::iter::once(rhs)) {
        t[m][j] = -(0..m).map(|i| t[i][j]).sum::<f64>();
    }
    let mut basis: Vec<usize> = (n..n + m).collect();

    for _ in 0..MAX_PIVOTS {
        // Bland's rule: lowest-index improving column.
        let Some(col) = (0..n + m).find(|&j| t[m][j] < -PIVOT_EPS) else { break };
        let mut best: Option<(usize, f64)> = None;
        for i in 0..m {
            if t[i][col] > PIVOT_EPS {
                let ratio = t[i][rhs] / t[i][col];
                let better = match best {
                    None => true,
                    Some((bi, br)) => ratio < br - 1e-15 || (ratio <= br + 1e-15 && basis[i] < basis[bi]),
                };
                if better {
                    best = Some((i, ratio));
                }
            }
        }
        let Some((row, _)) = best else { break };
        let pivot = t[row][col];
        t[row].iter_mut().for_each(|x| *x /= pivot);
        let pivot_row = t[row].clone();
        for (i, line) in t.iter_mut().enumerate() {
            if i != row && line[col] != 0.0 {
                let f = line[col];
                line.iter_mut().zip(&pivot_row).for_each(|(x, p)| *x -= f * p);
            }
        }
        basis[row] = col;
    }

    if -t[m][rhs] > tol {
        return None;
    }
    let mut x = vec![0.0; n];
    for (i, &j) in basis.iter().enumerate() {
        if j < n {
            x[j] = t[i][rhs].max(0.0);
        }
    }
    Some(x)
}

/// Whether `x` is a convex combination of `points`.
pub(crate) fn in_convex_hull(points: &[Vec<f64>], x: &[f64], tol: f64) -> bool {
    if points.is_empty() {
        return false;
    }
    let dim = x.len();
    let mut a: Vec<Vec<f64>> = (0..dim).map(|d| points.iter().map(|p| p[d]).collect()).collect();
    a.push(vec![1.0; points.len()]);
    let mut b = x.to_vec();
    b.push(1.0);
    match nonnegative_solution(&a, &b, tol) {
        None => false,
        Some(weights) => (0..dim).all(|d| {
            let combo: f64 = points.iter().zip(&weights).map(|(p, w)| p[d] * w).sum();
            (combo - x[d]).abs() <= tol
        }),
    }
}

/// Whether some strictly positive combination of `rows` is the zero vector.
pub(crate) fn has_positive_null_combination(rows: &[Vec<f64>]) -> bool {
    if rows.is_empty() {
        return true;
    }
    let dim = rows[0].len();
    // lambda = 1 + mu with mu >= 0: sum mu_i row_i = -sum row_i.
    let a: Vec<Vec<f64>> = (0..dim).map(|d| rows.iter().map(|r| r[d]).collect()).collect();
    let b: Vec<f64> = (0..dim).map(|d| -rows.iter().map(|r| r[d]).sum::<f64>()).collect();
    nonnegative_solution(&a, &b, 1e-9).is_some()
}
