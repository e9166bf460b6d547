use nalgebra::{DMatrix, DVector};

use super::cal::expit;
use super::linalg::{solve_spd, weighted_gram, xt_vec};
use crate::{Error, Result};

const MAX_ITER: usize = 100;
const DIVERGENCE: f64 = 30.0;

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    pub coef: DVector<f64>,
    pub iterations: usize,
}

fn neg_loglik(x: &DMatrix<f64>, y: &[f64], coef: &DVector<f64>) -> f64 {
    let eta = x * coef;
    eta.iter()
        .zip(y)
        .map(|(e, yi)| {
            let sp = e.max(0.0) + (-e.abs()).exp().ln_1p();
            sp - yi * e
        })
        .sum()
}

/// Maximum-likelihood logistic regression of `y` in `[0, 1]` on `x` by Newton
/// iterations with step halving. `names` label the columns in error reports.
pub fn fit_logistic_ml(x: &DMatrix<f64>, y: &[f64], names: &[String]) -> Result<LogisticFit> {
    let (n, p) = (x.nrows(), x.ncols());
    if y.len() != n {
        return Err(Error::InvalidInput("outcome length differs from design rows".into()));
    }
    let mean = y.iter().sum::<f64>() / n.max(1) as f64;
    if n == 0 || mean <= 0.0 || mean >= 1.0 {
        return Err(Error::Separation {
            model: "logistic".into(),
            columns: vec![names.first().cloned().unwrap_or_default()],
        });
    }
    let mut coef = DVector::zeros(p);
    coef[0] = (mean / (1.0 - mean)).ln();
    let mut value = neg_loglik(x, y, &coef);
    let mut resid = vec![0.0; n];
    let mut wts = vec![0.0; n];
    for iter in 0..MAX_ITER {
        let eta = x * &coef;
        for i in 0..n {
            let m = expit(eta[i]);
            resid[i] = m - y[i];
            wts[i] = m * (1.0 - m);
        }
        let grad = xt_vec(x, &resid);
        if grad.amax() <= 1e-10 * n as f64 {
            return Ok(LogisticFit {
                coef,
                iterations: iter,
            });
        }
        let hess = weighted_gram(x, &wts);
        let step = solve_spd(&hess, &(-&grad)).ok_or_else(|| separation(names, &coef))?;
        let slope = grad.dot(&step);
        let full = &coef + &step;
        let full_value = neg_loglik(x, y, &full);
        if (full_value - value).abs() <= 1e-13 * (1.0 + value.abs()) && gradient(x, y, &full).amax() < 0.5 * grad.amax() {
            coef = full;
            value = full_value;
            continue;
        }
        let mut s = 1.0;
        loop {
            let cand = &coef + s * &step;
            let v = neg_loglik(x, y, &cand);
            if v <= value + 1e-4 * s * slope {
                coef = cand;
                value = v;
                break;
            }
            s *= 0.5;
            if s < 1e-12 {
                return Ok(LogisticFit {
                    coef,
                    iterations: iter,
                });
            }
        }
        if coef.amax() > DIVERGENCE {
            return Err(separation(names, &coef));
        }
    }
    Err(Error::NonConvergence {
        model: "logistic".into(),
        iterations: MAX_ITER,
    })
}

fn gradient(x: &DMatrix<f64>, y: &[f64], coef: &DVector<f64>) -> DVector<f64> {
    let eta = x * coef;
    let r: Vec<f64> = eta.iter().zip(y).map(|(e, yi)| expit(*e) - yi).collect();
    xt_vec(x, &r)
}

fn separation(names: &[String], coef: &DVector<f64>) -> Error {
    let m = coef.amax();
    Error::Separation {
        model: "logistic".into(),
        columns: coef
            .iter()
            .enumerate()
            .filter(|(_, v)| v.abs() >= 0.5 * m)
            .map(|(j, _)| names.get(j).cloned().unwrap_or_else(|| format!("column {j}")))
            .collect(),
    }
}
