//! Small dense symmetric positive-definite helpers for the logistic fits.
//! Matrices here are at most a few dozen columns wide.

use ndarray::{Array1, Array2};

/// Lower Cholesky factor of `a`, or `None` if a pivot is not positive.
pub(crate) fn cholesky(a: &Array2<f64>) -> Option<Array2<f64>> {
    let n = a.nrows();
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= l[[j, k]] * l[[j, k]];
        }
        if d <= 0.0 || !d.is_finite() {
            return None;
        }
        let d = d.sqrt();
        l[[j, j]] = d;
        for i in j + 1..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / d;
        }
    }
    Some(l)
}

/// Solves `L L^T x = b`.
pub(crate) fn cholesky_solve(l: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
    let n = l.nrows();
    let mut y = b.clone();
    for i in 0..n {
        for k in 0..i {
            y[i] -= l[[i, k]] * y[k];
        }
        y[i] /= l[[i, i]];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            y[i] -= l[[k, i]] * y[k];
        }
        y[i] /= l[[i, i]];
    }
    y
}

pub(crate) fn cholesky_inverse(l: &Array2<f64>) -> Array2<f64> {
    let n = l.nrows();
    let mut inv = Array2::zeros((n, n));
    for c in 0..n {
        let mut e = Array1::zeros(n);
        e[c] = 1.0;
        inv.column_mut(c).assign(&cholesky_solve(l, &e));
    }
    inv
}

/// Greedy pivot scan in column order: a column is kept when its residual
/// diagonal after projecting out the kept columns exceeds `rel_tol` times its
/// own diagonal. Returns the kept column indices.
pub(crate) fn independent_columns(gram: &Array2<f64>, rel_tol: f64) -> Vec<usize> {
    let n = gram.nrows();
    let mut kept: Vec<usize> = Vec::new();
    // Rows of the partial Cholesky factor, indexed by position in `kept`.
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for c in 0..n {
        let diag = gram[[c, c]];
        if diag <= 0.0 {
            continue;
        }
        let mut row = Vec::with_capacity(kept.len());
        for (q, &kq) in kept.iter().enumerate() {
            let mut s = gram[[c, kq]];
            for t in 0..q {
                s -= row[t] * rows[q][t];
            }
            row.push(s / rows[q][q]);
        }
        let resid = diag - row.iter().map(|v| v * v).sum::<f64>();
        if resid > rel_tol * diag {
            row.push(resid.sqrt());
            rows.push(row);
            kept.push(c);
        }
    }
    kept
}
