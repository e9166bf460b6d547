use nalgebra::DVector;

use super::design::Design;
use super::linalg::{dependent_columns, weighted_gram, xt_vec};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct WlsFit {
    pub coef: DVector<f64>,
}

/// Weighted least squares of `z` on the design. Dependent columns among the
/// positively weighted rows are reported by name.
pub fn fit_weighted_ls(design: &Design, z: &[f64], w: &[f64]) -> Result<WlsFit> {
    let x = &design.matrix;
    let n = x.nrows();
    if z.len() != n || w.len() != n {
        return Err(Error::InvalidInput("response, weights and design differ in length".into()));
    }
    if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidInput("weights must be finite and nonnegative".into()));
    }
    if z.iter().zip(w).any(|(v, wi)| *wi > 0.0 && !v.is_finite()) {
        return Err(Error::InvalidInput("response contains non-finite values".into()));
    }
    let gram = weighted_gram(x, w);
    let wz: Vec<f64> = z.iter().zip(w).map(|(a, b)| if *b > 0.0 { a * b } else { 0.0 }).collect();
    let rhs = xt_vec(x, &wz);
    match gram.clone().cholesky() {
        Some(ch) => {
            let coef = ch.solve(&rhs);
            let dep = dependent_columns(&gram, 1e-12);
            if !dep.is_empty() {
                return Err(singular(design, dep));
            }
            Ok(WlsFit { coef })
        }
        None => Err(singular(design, dependent_columns(&gram, 1e-12))),
    }
}

fn singular(design: &Design, dep: Vec<usize>) -> Error {
    Error::Singular(dep.into_iter().map(|j| design.columns[j].name.clone()).collect())
}
