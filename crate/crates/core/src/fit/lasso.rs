use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cal::{cal_row, Arm};
use super::quantile::{kkt_residual, outcome_scale, simplex_refine, smoothed_row};
use crate::bounds::check_loss;
use crate::{Error, Result};

/// Smoothing levels of the check loss used by the penalized quantile fit.
const LASSO_SMOOTHING: [f64; 3] = [1e-2, 1e-4, 1e-6];

/// Smooth part of an RCAL problem, written as a mean of per-row losses in the
/// linear predictor.
#[derive(Debug, Clone, PartialEq)]
pub enum LassoLoss {
    /// Calibrated propensity loss for one arm.
    CalLogistic { t: Vec<bool>, arm: Arm },
    /// Weighted check loss, smoothed during optimization.
    WeightedQuantile { y: Vec<f64>, w: Vec<f64>, tau: f64 },
    /// Half the weighted squared error.
    WeightedLs { z: Vec<f64>, w: Vec<f64> },
}

impl LassoLoss {
    pub fn n(&self) -> usize {
        match self {
            LassoLoss::CalLogistic { t, .. } => t.len(),
            LassoLoss::WeightedQuantile { y, .. } => y.len(),
            LassoLoss::WeightedLs { z, .. } => z.len(),
        }
    }

    fn subset(&self, rows: &[usize]) -> Self {
        let pick = |v: &[f64]| rows.iter().map(|i| v[*i]).collect::<Vec<f64>>();
        match self {
            LassoLoss::CalLogistic { t, arm } => LassoLoss::CalLogistic {
                t: rows.iter().map(|i| t[*i]).collect(),
                arm: *arm,
            },
            LassoLoss::WeightedQuantile { y, w, tau } => LassoLoss::WeightedQuantile {
                y: pick(y),
                w: pick(w),
                tau: *tau,
            },
            LassoLoss::WeightedLs { z, w } => LassoLoss::WeightedLs { z: pick(z), w: pick(w) },
        }
    }

    /// Value, first and second derivative of row `i` at linear predictor `eta`.
    fn row(&self, i: usize, eta: f64, eps: f64) -> (f64, f64, f64) {
        match self {
            LassoLoss::CalLogistic { t, arm } => cal_row(*arm, t[i], eta),
            LassoLoss::WeightedQuantile { y, w, tau } => smoothed_row(*tau, eps, w[i], y[i], eta),
            LassoLoss::WeightedLs { z, w } => {
                let r = z[i] - eta;
                (0.5 * w[i] * r * r, -w[i] * r, w[i])
            }
        }
    }

    /// Unsmoothed per-row loss, used for held-out evaluation.
    fn exact_row(&self, i: usize, eta: f64) -> f64 {
        match self {
            LassoLoss::WeightedQuantile { y, w, tau } => w[i] * check_loss(*tau, y[i], eta),
            _ => self.row(i, eta, 1.0).0,
        }
    }

    fn smoothing_levels(&self) -> Vec<f64> {
        match self {
            LassoLoss::WeightedQuantile { y, w, .. } => {
                let ys: Vec<f64> = y.iter().zip(w).filter(|(_, w)| **w > 0.0).map(|(y, _)| *y).collect();
                let s = outcome_scale(&ys);
                LASSO_SMOOTHING.iter().map(|l| l * s).collect()
            }
            _ => vec![1.0],
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        if self.n() != n {
            return Err(Error::InvalidInput("loss data and design differ in length".into()));
        }
        match self {
            LassoLoss::WeightedQuantile { w, tau, .. } => {
                if !(0.0..=1.0).contains(tau) {
                    return Err(Error::InvalidParameter(format!("tau must lie in [0, 1], got {tau}")));
                }
                if w.iter().all(|v| *v == 0.0) {
                    return Err(Error::InvalidInput("all weights are zero".into()));
                }
            }
            LassoLoss::WeightedLs { w, .. } if w.iter().all(|v| *v == 0.0) => {
                return Err(Error::InvalidInput("all weights are zero".into()));
            }
            _ => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoConfig {
    /// Number of penalty levels `kappa_max * 2^(-j/4)`, `j = 0..n_kappa`.
    pub n_kappa: usize,
    pub folds: usize,
    pub seed: u64,
    /// Target infinity norm of the KKT residual.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LassoConfig {
    fn default() -> Self {
        Self {
            n_kappa: 25,
            folds: 5,
            seed: 0,
            tol: 1e-9,
            max_iter: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoFit {
    pub coef: DVector<f64>,
    pub kappa: f64,
    /// KKT residual of the smooth problem solved last.
    pub kkt_residual: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoPath {
    pub kappas: Vec<f64>,
    pub fits: Vec<LassoFit>,
    pub cv_loss: Vec<f64>,
    pub selected: usize,
}

impl LassoPath {
    pub fn selected_fit(&self) -> &LassoFit {
        &self.fits[self.selected]
    }
}

struct Derivs {
    value: f64,
    d1: Vec<f64>,
    d2: Vec<f64>,
}

fn derivs(loss: &LassoLoss, eta: &DVector<f64>, eps: f64) -> Derivs {
    let n = eta.len();
    let nf = n as f64;
    let mut d1 = vec![0.0; n];
    let mut d2 = vec![0.0; n];
    let mut value = 0.0;
    for i in 0..n {
        let (v, a, b) = loss.row(i, eta[i], eps);
        value += v;
        d1[i] = a / nf;
        d2[i] = b / nf;
    }
    Derivs {
        value: value / nf,
        d1,
        d2,
    }
}

fn smooth_value(loss: &LassoLoss, eta: &DVector<f64>, eps: f64) -> f64 {
    (0..eta.len()).map(|i| loss.row(i, eta[i], eps).0).sum::<f64>() / eta.len() as f64
}

fn l1(coef: &DVector<f64>) -> f64 {
    coef.iter().skip(1).map(|v| v.abs()).sum()
}

fn soft(x: f64, k: f64) -> f64 {
    if k.is_infinite() {
        0.0
    } else if x > k * (1.0 + 1e-12) {
        x - k
    } else if x < -k * (1.0 + 1e-12) {
        x + k
    } else {
        0.0
    }
}

fn kkt(grad: &DVector<f64>, coef: &DVector<f64>, kappa: f64) -> f64 {
    let mut worst = grad[0].abs();
    for j in 1..coef.len() {
        let r = if coef[j] != 0.0 {
            (grad[j] + kappa * coef[j].signum()).abs()
        } else if kappa.is_infinite() {
            0.0
        } else {
            (grad[j].abs() - kappa).max(0.0)
        };
        worst = worst.max(r);
    }
    worst
}

/// Proximal Newton iterations for one smoothing level. Each quadratic model is
/// minimized by cyclic coordinate descent.
fn prox_newton(
    loss: &LassoLoss,
    x: &DMatrix<f64>,
    kappa: f64,
    eps: f64,
    coef: &mut DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> (f64, usize) {
    let (n, p) = (x.nrows(), x.ncols());
    let cols: Vec<&[f64]> = x.as_slice().chunks(n.max(1)).collect();
    let mut eta = x * &*coef;
    let mut last_kkt = f64::INFINITY;
    for iter in 0..max_iter {
        let dv = derivs(loss, &eta, eps);
        let grad = DVector::from_fn(p, |j, _| cols[j].iter().zip(&dv.d1).map(|(a, b)| a * b).sum());
        last_kkt = kkt(&grad, coef, kappa);
        if last_kkt <= tol {
            return (last_kkt, iter);
        }
        let hdiag: Vec<f64> = (0..p)
            .map(|j| cols[j].iter().zip(&dv.d2).map(|(a, b)| a * a * b).sum())
            .collect();
        let ridge = 1e-12 * hdiag.iter().copied().fold(0.0, f64::max) + 1e-300;
        let mut d = vec![0.0; p];
        let mut v = vec![0.0; n];
        let mut active: Vec<bool> = (0..p).map(|j| j == 0 || coef[j] != 0.0).collect();
        let mut full_pass = true;
        for _sweep in 0..1000 {
            let mut change = 0.0_f64;
            for j in 0..p {
                if !full_pass && !active[j] {
                    continue;
                }
                let a = hdiag[j] + ridge;
                let hd: f64 = cols[j]
                    .iter()
                    .zip(&dv.d2)
                    .zip(&v)
                    .map(|((x, w), vi)| x * w * vi)
                    .sum();
                let c = grad[j] + hd - hdiag[j] * d[j];
                let u = if j == 0 {
                    coef[0] - c / a
                } else {
                    soft(a * coef[j] - c, kappa) / a
                };
                let delta = u - coef[j] - d[j];
                if delta != 0.0 {
                    d[j] += delta;
                    for (vi, xij) in v.iter_mut().zip(cols[j]) {
                        *vi += delta * xij;
                    }
                    change = change.max(delta.abs() * a.sqrt());
                }
                if j > 0 {
                    active[j] = coef[j] + d[j] != 0.0;
                }
            }
            if change <= 1e-3 * tol {
                if full_pass {
                    break;
                }
                full_pass = true;
            } else {
                full_pass = false;
            }
        }
        let step = DVector::from_vec(d);
        let obj = dv.value + kappa_l1(kappa, coef);
        let target = coef.clone() + &step;
        let decrease = grad.dot(&step) + kappa_l1(kappa, &target) - kappa_l1(kappa, coef);
        if decrease > -1e-18 * (1.0 + obj.abs()) {
            return (last_kkt, iter);
        }
        let xv = DVector::from_vec(v);
        let mut t = 1.0;
        let mut accepted = false;
        while t > 1e-12 {
            let cand = &*coef + t * &step;
            let cand_eta = &eta + t * &xv;
            let f = smooth_value(loss, &cand_eta, eps) + kappa_l1(kappa, &cand);
            if f <= obj + 1e-4 * t * decrease {
                *coef = cand;
                eta = cand_eta;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            return (last_kkt, iter);
        }
    }
    (last_kkt, max_iter)
}

fn kappa_l1(kappa: f64, coef: &DVector<f64>) -> f64 {
    if kappa.is_infinite() {
        0.0
    } else {
        kappa * l1(coef)
    }
}

/// Exact solution of the penalized weighted quantile problem started from
/// `coef`. The penalty `kappa |b_j|` is written as two pseudo-observations
/// with zero response, rows `+e_j` and `-e_j` and weight `n kappa`, which
/// turns the problem into an unpenalized one. Returns the coefficients and
/// their subgradient KKT residual.
fn exact_quantile_polish(
    x: &DMatrix<f64>,
    y: &[f64],
    w: &[f64],
    tau: f64,
    kappa: f64,
    coef: &DVector<f64>,
) -> Option<(DVector<f64>, f64)> {
    let (n, p) = (x.nrows(), x.ncols());
    let live: Vec<usize> = (0..n).filter(|i| w[*i] > 0.0).collect();
    let scale = outcome_scale(&live.iter().map(|i| y[*i]).collect::<Vec<_>>());
    if kappa.is_infinite() {
        let c = simplex_refine(x, y, w, tau, coef, &[0])?;
        let r = kkt_residual(&x.columns(0, 1).into_owned(), y, w, tau, &c.rows(0, 1).into_owned(), scale);
        return Some((c, r));
    }
    let extra = if kappa > 0.0 { 2 * (p - 1) } else { 0 };
    let m = live.len() + extra;
    let mut xa = DMatrix::zeros(m, p);
    let mut ya = vec![0.0; m];
    let mut wa = vec![0.0; m];
    for (r, &i) in live.iter().enumerate() {
        xa.row_mut(r).copy_from(&x.row(i));
        ya[r] = y[i];
        wa[r] = w[i];
    }
    if kappa > 0.0 {
        for j in 1..p {
            let r = live.len() + 2 * (j - 1);
            xa[(r, j)] = 1.0;
            xa[(r + 1, j)] = -1.0;
            wa[r] = n as f64 * kappa;
            wa[r + 1] = n as f64 * kappa;
        }
    }
    let all: Vec<usize> = (0..p).collect();
    let mut c = simplex_refine(&xa, &ya, &wa, tau, coef, &all)?;
    let big = c.amax();
    for j in 1..p {
        if c[j].abs() <= 1e-12 * (1.0 + big) {
            c[j] = 0.0;
        }
    }
    let r = kkt_residual(&xa, &ya, &wa, tau, &c, scale) * m as f64 / n as f64;
    Some((c, r))
}

/// Penalized fit at a single `kappa`; the intercept (column 0) is unpenalized.
pub fn fit_lasso(
    loss: &LassoLoss,
    x: &DMatrix<f64>,
    kappa: f64,
    warm: Option<&DVector<f64>>,
    config: &LassoConfig,
) -> Result<LassoFit> {
    loss.validate(x.nrows())?;
    if kappa.is_nan() || kappa < 0.0 {
        return Err(Error::InvalidParameter(format!("kappa must be nonnegative, got {kappa}")));
    }
    let p = x.ncols();
    let mut coef = match warm {
        Some(c) if c.len() == p => c.clone(),
        _ => DVector::zeros(p),
    };
    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    for eps in loss.smoothing_levels() {
        let (r, it) = prox_newton(loss, x, kappa, eps, &mut coef, config.tol, config.max_iter);
        residual = r;
        iterations += it;
    }
    if let LassoLoss::WeightedQuantile { y, w, tau } = loss {
        if let Some((c, r)) = exact_quantile_polish(x, y, w, *tau, kappa, &coef) {
            coef = c;
            residual = r;
        }
    }
    Ok(LassoFit {
        coef,
        kappa,
        kkt_residual: residual,
        iterations,
    })
}

/// Smallest penalty at which every non-intercept coefficient is zero: the
/// largest absolute gradient entry at the intercept-only fit.
pub fn kappa_max(loss: &LassoLoss, x: &DMatrix<f64>, config: &LassoConfig) -> Result<f64> {
    loss.validate(x.nrows())?;
    let p = x.ncols();
    let mut coef = DVector::zeros(p);
    let levels = loss.smoothing_levels();
    for eps in &levels {
        prox_newton(loss, x, f64::INFINITY, *eps, &mut coef, config.tol, config.max_iter);
    }
    let eta = x * &coef;
    let dv = derivs(loss, &eta, *levels.last().unwrap());
    let grad = x.tr_mul(&DVector::from_vec(dv.d1));
    Ok(grad.iter().skip(1).fold(0.0_f64, |m, v| m.max(v.abs())))
}

fn path(loss: &LassoLoss, x: &DMatrix<f64>, kappas: &[f64], config: &LassoConfig) -> Result<Vec<LassoFit>> {
    let mut fits: Vec<LassoFit> = Vec::with_capacity(kappas.len());
    for k in kappas {
        let warm = fits.last().map(|f| f.coef.clone());
        fits.push(fit_lasso(loss, x, *k, warm.as_ref(), config)?);
    }
    Ok(fits)
}

/// Fold labels from a shuffle keyed by the seed and the sample size.
fn fold_labels(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let key = seed ^ (n as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(key));
    let mut labels = vec![0; n];
    for (pos, i) in idx.into_iter().enumerate() {
        labels[i] = pos % folds;
    }
    labels
}

/// Penalty path `kappa_max * 2^(-j/4)` with the penalty chosen by K-fold
/// cross-validation of the unpenalized, unsmoothed loss.
pub fn fit_lasso_path_cv(loss: &LassoLoss, x: &DMatrix<f64>, config: &LassoConfig) -> Result<LassoPath> {
    let n = x.nrows();
    if config.folds < 2 || config.folds > n {
        return Err(Error::InvalidParameter(format!(
            "fold count {} invalid for {n} rows",
            config.folds
        )));
    }
    let kmax = kappa_max(loss, x, config)?;
    let kappas: Vec<f64> = (0..config.n_kappa)
        .map(|j| kmax * 2f64.powf(-(j as f64) / 4.0))
        .collect();
    let labels = fold_labels(n, config.folds, config.seed);
    let mut cv_loss = vec![0.0; kappas.len()];
    for fold in 0..config.folds {
        let train: Vec<usize> = (0..n).filter(|i| labels[*i] != fold).collect();
        let test: Vec<usize> = (0..n).filter(|i| labels[*i] == fold).collect();
        let sub = loss.subset(&train);
        let held = loss.subset(&test);
        let xtr = x.select_rows(&train);
        let xte = x.select_rows(&test);
        let fits = path(&sub, &xtr, &kappas, config)?;
        for (k, f) in fits.iter().enumerate() {
            let eta = &xte * &f.coef;
            let l: f64 = (0..test.len()).map(|i| held.exact_row(i, eta[i])).sum::<f64>() / test.len() as f64;
            cv_loss[k] += l / config.folds as f64;
        }
    }
    let mut selected = 0;
    for k in 1..kappas.len() {
        if cv_loss[k] < cv_loss[selected] {
            selected = k;
        }
    }
    let fits = path(loss, x, &kappas, config)?;
    Ok(LassoPath {
        kappas,
        fits,
        cv_loss,
        selected,
    })
}
