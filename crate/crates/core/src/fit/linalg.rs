use nalgebra::{DMatrix, DVector};

/// Solves `a x = b` for symmetric positive definite `a`, adding a small ridge
/// if the plain Cholesky factorization fails.
pub(crate) fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(ch) = a.clone().cholesky() {
        return Some(ch.solve(b));
    }
    let scale = (0..a.nrows()).map(|i| a[(i, i)].abs()).fold(0.0, f64::max).max(1e-300);
    for k in [1e-12, 1e-10, 1e-8] {
        let mut r = a.clone();
        for i in 0..r.nrows() {
            r[(i, i)] += k * scale;
        }
        if let Some(ch) = r.cholesky() {
            return Some(ch.solve(b));
        }
    }
    None
}

/// Indices of columns of a Gram matrix that are (numerically) linear
/// combinations of earlier columns.
pub(crate) fn dependent_columns(gram: &DMatrix<f64>, rel_tol: f64) -> Vec<usize> {
    let p = gram.nrows();
    let mut kept: Vec<usize> = Vec::new();
    let mut l = DMatrix::<f64>::zeros(p, p);
    let mut dependent = Vec::new();
    for j in 0..p {
        let m = kept.len();
        let mut c = vec![0.0; m];
        for a in 0..m {
            let mut s = gram[(kept[a], j)];
            for b in 0..a {
                s -= l[(a, b)] * c[b];
            }
            c[a] = s / l[(a, a)];
        }
        let resid = gram[(j, j)] - c.iter().map(|v| v * v).sum::<f64>();
        if resid <= rel_tol * gram[(j, j)].abs().max(1e-300) {
            dependent.push(j);
        } else {
            for (b, v) in c.iter().enumerate() {
                l[(m, b)] = *v;
            }
            l[(m, m)] = resid.sqrt();
            kept.push(j);
        }
    }
    dependent
}

/// `X^T diag(w) X` accumulated row by row.
pub(crate) fn weighted_gram(x: &DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    let p = x.ncols();
    let mut g = DMatrix::<f64>::zeros(p, p);
    let mut row = vec![0.0; p];
    for i in 0..x.nrows() {
        if w[i] == 0.0 {
            continue;
        }
        for j in 0..p {
            row[j] = x[(i, j)];
        }
        for a in 0..p {
            let wa = w[i] * row[a];
            if wa == 0.0 {
                continue;
            }
            for b in a..p {
                g[(a, b)] += wa * row[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            g[(a, b)] = g[(b, a)];
        }
    }
    g
}

/// `X^T v`.
pub(crate) fn xt_vec(x: &DMatrix<f64>, v: &[f64]) -> DVector<f64> {
    x.tr_mul(&DVector::from_column_slice(v))
}
