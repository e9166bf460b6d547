use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::design::Design;
use super::linalg::{solve_spd, weighted_gram, xt_vec};
use crate::{Error, Result};

/// Fitted propensity scores are clipped to `[PROPENSITY_CLIP, 1 - PROPENSITY_CLIP]`.
pub const PROPENSITY_CLIP: f64 = 1e-6;

const GRAD_TOL: f64 = 1e-10;
const MAX_ITER: usize = 200;
/// Coefficients beyond this magnitude are taken as a sign of separation.
const DIVERGENCE: f64 = 1e3;

pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Which arm the calibrated propensity model balances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Treated,
    Control,
}

impl Arm {
    /// `(indicator of the arm, sign of the linear predictor in the exponent)`.
    pub(crate) fn parts(self, t: bool) -> (f64, f64) {
        match self {
            Arm::Treated => (if t { 1.0 } else { 0.0 }, 1.0),
            Arm::Control => (if t { 0.0 } else { 1.0 }, -1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalFit {
    pub coef: DVector<f64>,
    pub loss: f64,
    pub grad_norm: f64,
    pub iterations: usize,
}

/// Per-row value, first and second derivative of the calibration loss in the
/// linear predictor.
pub(crate) fn cal_row(arm: Arm, t: bool, eta: f64) -> (f64, f64, f64) {
    let (a, s) = arm.parts(t);
    let e = if a > 0.0 { (-s * eta).exp() } else { 0.0 };
    (a * e + (1.0 - a) * s * eta, -s * a * e + s * (1.0 - a), a * e)
}

fn grad_at(x: &DMatrix<f64>, t: &[bool], arm: Arm, coef: &DVector<f64>) -> DVector<f64> {
    let eta = x * coef;
    let n = t.len() as f64;
    let d1: Vec<f64> = eta.iter().zip(t).map(|(e, ti)| cal_row(arm, *ti, *e).1 / n).collect();
    xt_vec(x, &d1)
}

fn loss_at(x: &DMatrix<f64>, t: &[bool], arm: Arm, coef: &DVector<f64>) -> f64 {
    let eta = x * coef;
    let n = t.len() as f64;
    eta.iter().zip(t).map(|(e, ti)| cal_row(arm, *ti, *e).0).sum::<f64>() / n
}

/// Calibrated propensity fit. For the treated arm it minimizes
/// `mean{T exp(-f'g) + (1 - T) f'g}`, whose first-order condition balances
/// every column of `f` between the inverse-propensity-weighted treated units
/// and the full sample. The control arm uses the mirrored loss
/// `mean{(1 - T) exp(f'g) - T f'g}`.
pub fn fit_cal_logistic(design: &Design, t: &[bool], arm: Arm) -> Result<CalFit> {
    let x = &design.matrix;
    let (n, p) = (x.nrows(), x.ncols());
    if t.len() != n {
        return Err(Error::InvalidInput("treatment length differs from design rows".into()));
    }
    let in_arm = t.iter().filter(|ti| arm.parts(**ti).0 > 0.0).count();
    if in_arm == 0 || in_arm == n {
        return Err(Error::InvalidInput(
            "both treated and control units are required for a propensity fit".into(),
        ));
    }
    let frac = in_arm as f64 / n as f64;
    let mut coef = DVector::zeros(p);
    coef[0] = match arm {
        Arm::Treated => (frac / (1.0 - frac)).ln(),
        Arm::Control => ((1.0 - frac) / frac).ln(),
    };
    let nf = n as f64;
    let mut loss = loss_at(x, t, arm, &coef);
    let mut d1 = vec![0.0; n];
    let mut d2 = vec![0.0; n];
    for iter in 0..MAX_ITER {
        let eta = x * &coef;
        for i in 0..n {
            let (_, g, h) = cal_row(arm, t[i], eta[i]);
            d1[i] = g / nf;
            d2[i] = h / nf;
        }
        let grad = xt_vec(x, &d1);
        let gnorm = grad.amax();
        if gnorm <= GRAD_TOL {
            return Ok(CalFit {
                coef,
                loss,
                grad_norm: gnorm,
                iterations: iter,
            });
        }
        let hess = weighted_gram(x, &d2);
        let step = solve_spd(&hess, &(-&grad)).ok_or_else(|| separation(design, &coef))?;
        let slope = grad.dot(&step);
        let full = &coef + &step;
        let full_loss = loss_at(x, t, arm, &full);
        if (full_loss - loss).abs() <= 1e-13 * (1.0 + loss.abs()) && grad_at(x, t, arm, &full).amax() < 0.5 * gnorm {
            coef = full;
            loss = full_loss;
            continue;
        }
        let mut s = 1.0;
        loop {
            let cand = &coef + s * &step;
            let l = loss_at(x, t, arm, &cand);
            if l.is_finite() && l <= loss + 1e-4 * s * slope {
                coef = cand;
                loss = l;
                break;
            }
            s *= 0.5;
            if s < 1e-12 {
                if gnorm <= 1e-8 {
                    return Ok(CalFit {
                        coef,
                        loss,
                        grad_norm: gnorm,
                        iterations: iter,
                    });
                }
                return Err(Error::NonConvergence {
                    model: "calibrated propensity".into(),
                    iterations: iter,
                });
            }
        }
        if coef.amax() > DIVERGENCE {
            return Err(separation(design, &coef));
        }
    }
    Err(Error::NonConvergence {
        model: "calibrated propensity".into(),
        iterations: MAX_ITER,
    })
}

fn separation(design: &Design, coef: &DVector<f64>) -> Error {
    let m = coef.iter().skip(1).fold(0.0_f64, |a, v| a.max(v.abs()));
    let columns = coef
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, v)| v.abs() >= 0.5 * m && m > 0.0)
        .map(|(j, _)| design.columns[j].name.clone())
        .collect();
    Error::Separation {
        model: "calibrated propensity".into(),
        columns,
    }
}

/// `P(T=1 | x) = expit(f'g)`, clipped. Both arms share this link.
pub fn propensity_scores(design: &Design, coef: &DVector<f64>) -> Vec<f64> {
    design
        .predict(coef)
        .into_iter()
        .map(|eta| expit(eta).clamp(PROPENSITY_CLIP, 1.0 - PROPENSITY_CLIP))
        .collect()
}
