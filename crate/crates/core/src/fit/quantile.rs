use nalgebra::{DMatrix, DVector};

use super::linalg::{solve_spd, weighted_gram, xt_vec};
use crate::bounds::check_loss;
use crate::{Error, Result};

/// Smoothing levels, relative to the outcome scale, used by the continuation
/// path of the smoothed check loss.
pub(crate) const SMOOTHING_LEVELS: [f64; 4] = [1e-2, 1e-3, 1e-4, 1e-5];

#[derive(Debug, Clone, PartialEq)]
pub struct QuantileFit {
    pub coef: DVector<f64>,
    /// `mean{w rho_tau(y - h'beta)}` over all rows.
    pub objective: f64,
    /// Infinity norm of the smallest attainable subgradient, divided by `n`.
    pub kkt_residual: f64,
    pub iterations: usize,
}

/// `mean{w rho_tau(y - h'beta)}` over all rows.
pub fn weighted_check_objective(h: &DMatrix<f64>, y: &[f64], w: &[f64], tau: f64, coef: &DVector<f64>) -> f64 {
    let fit = h * coef;
    let n = y.len() as f64;
    (0..y.len())
        .filter(|i| w[*i] != 0.0)
        .map(|i| w[i] * check_loss(tau, y[i], fit[i]))
        .sum::<f64>()
        / n
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Per-row value and derivatives in the fitted value `eta` of the smoothed
/// check loss `w [tau r + eps softplus(-r / eps)]`, `r = y - eta`.
pub(crate) fn smoothed_row(tau: f64, eps: f64, w: f64, y: f64, eta: f64) -> (f64, f64, f64) {
    let r = y - eta;
    let z = -r / eps;
    let s = sigmoid(z);
    (
        w * (tau * r + eps * softplus(z)),
        -w * (tau - s),
        w * s * (1.0 - s) / eps,
    )
}

/// Robust scale of the outcome used to set smoothing levels.
pub(crate) fn outcome_scale(y: &[f64]) -> f64 {
    let lo = y.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let r = hi - lo;
    if r.is_finite() && r > 0.0 {
        r
    } else {
        1.0
    }
}

fn smoothed_total(h: &DMatrix<f64>, y: &[f64], w: &[f64], tau: f64, eps: f64, coef: &DVector<f64>) -> f64 {
    let eta = h * coef;
    (0..y.len()).map(|i| smoothed_row(tau, eps, w[i], y[i], eta[i]).0).sum()
}

/// Minimizes the smoothed loss by damped Newton from `coef`.
fn newton_smoothed(
    h: &DMatrix<f64>,
    y: &[f64],
    w: &[f64],
    tau: f64,
    eps: f64,
    coef: &mut DVector<f64>,
) -> usize {
    let n = y.len();
    let mut d1 = vec![0.0; n];
    let mut d2 = vec![0.0; n];
    let mut value = smoothed_total(h, y, w, tau, eps, coef);
    for iter in 0..100 {
        let eta = h * &*coef;
        for i in 0..n {
            let (_, a, b) = smoothed_row(tau, eps, w[i], y[i], eta[i]);
            d1[i] = a;
            d2[i] = b;
        }
        let grad = xt_vec(h, &d1);
        let hess = weighted_gram(h, &d2);
        let Some(step) = solve_spd(&hess, &(-&grad)) else {
            return iter;
        };
        let slope = grad.dot(&step);
        if slope.abs() <= 1e-15 * (1.0 + value.abs()) {
            return iter;
        }
        let mut s = 1.0;
        let mut moved = false;
        while s > 1e-10 {
            let cand = &*coef + s * &step;
            let v = smoothed_total(h, y, w, tau, eps, &cand);
            if v <= value + 1e-4 * s * slope {
                *coef = cand;
                value = v;
                moved = true;
                break;
            }
            s *= 0.5;
        }
        if !moved || (s * step.amax()) <= 1e-13 * (1.0 + coef.amax()) {
            return iter + 1;
        }
    }
    100
}

/// Indices of the `active.len()` rows with the smallest residuals whose
/// restricted design rows are linearly independent.
fn select_basis(h: &DMatrix<f64>, y: &[f64], w: &[f64], coef: &DVector<f64>, active: &[usize]) -> Option<Vec<usize>> {
    let k = active.len();
    if k == 0 {
        return None;
    }
    let fit = h * coef;
    let mut order: Vec<usize> = (0..y.len()).filter(|i| w[*i] > 0.0).collect();
    order.sort_by(|a, b| (y[*a] - fit[*a]).abs().total_cmp(&(y[*b] - fit[*b]).abs()));
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut chosen: Vec<usize> = Vec::with_capacity(k);
    for i in order {
        let row: Vec<f64> = active.iter().map(|j| h[(i, *j)]).collect();
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let mut r = row.clone();
        for b in &basis {
            let d: f64 = r.iter().zip(b).map(|(x, y)| x * y).sum();
            for (x, y) in r.iter_mut().zip(b) {
                *x -= d * y;
            }
        }
        let rn = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if rn > 1e-9 * norm {
            basis.push(r.iter().map(|v| v / rn).collect());
            chosen.push(i);
            if chosen.len() == k {
                return Some(chosen);
            }
        }
    }
    None
}

/// Exact minimization of the weighted check loss over the `active` columns
/// by pivoting between interpolating bases, started from the basis nearest
/// to `coef`. Each pivot moves one basic residual off zero along the edge of
/// steepest descent and stops at the breakpoint where the directional
/// derivative turns nonnegative.
pub(crate) fn simplex_refine(
    h: &DMatrix<f64>,
    y: &[f64],
    w: &[f64],
    tau: f64,
    coef: &DVector<f64>,
    active: &[usize],
) -> Option<DVector<f64>> {
    let k = active.len();
    let mut rows = select_basis(h, y, w, coef, active)?;
    let ha = DMatrix::from_fn(h.nrows(), k, |i, c| h[(i, active[c])]);
    let live: Vec<usize> = (0..y.len()).filter(|i| w[*i] > 0.0).collect();
    let scale = outcome_scale(y);
    let zero_tol = 1e-11 * scale;
    let max_pivots = 50 * live.len().max(10);
    let mut beta = DVector::<f64>::zeros(k);
    for _ in 0..max_pivots {
        let hb = DMatrix::from_fn(k, k, |r, c| ha[(rows[r], c)]);
        let lu = hb.lu();
        let yb = DVector::from_fn(k, |r, _| y[rows[r]]);
        beta = lu.solve(&yb)?;
        let inv = lu.try_inverse()?;
        let g = &ha * &inv;
        let resid: Vec<f64> = (0..y.len())
            .map(|i| y[i] - ha.row(i).dot(&beta.transpose()))
            .collect();
        let in_basis = |i: usize| rows.contains(&i);
        let mut best: Option<(f64, usize, f64)> = None;
        for b in 0..k {
            for sigma in [1.0, -1.0] {
                let mut slope = w[rows[b]] * if sigma > 0.0 { 1.0 - tau } else { tau };
                for &i in &live {
                    if in_basis(i) {
                        continue;
                    }
                    let gi = sigma * g[(i, b)];
                    let r = resid[i];
                    slope += w[i]
                        * if r > zero_tol {
                            -tau * gi
                        } else if r < -zero_tol {
                            (1.0 - tau) * gi
                        } else {
                            (-tau * gi).max((1.0 - tau) * gi)
                        };
                }
                if best.is_none_or(|(s, _, _)| slope < s) {
                    best = Some((slope, b, sigma));
                }
            }
        }
        let (slope, b, sigma) = best?;
        if slope >= -1e-12 * (1.0 + scale) {
            break;
        }
        let mut crossings: Vec<(f64, usize)> = live
            .iter()
            .filter(|i| !in_basis(**i))
            .filter_map(|&i| {
                let gi = sigma * g[(i, b)];
                let r = resid[i];
                (r.abs() > zero_tol && gi != 0.0 && r / gi > 0.0).then_some((r / gi, i))
            })
            .collect();
        crossings.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut s = slope;
        let mut entering = None;
        for (_, i) in crossings {
            s += w[i] * g[(i, b)].abs();
            if s >= 0.0 {
                entering = Some(i);
                break;
            }
        }
        rows[b] = entering?;
    }
    let mut out = DVector::zeros(h.ncols());
    for (c, j) in active.iter().enumerate() {
        out[*j] = beta[c];
    }
    Some(out)
}

/// Smallest infinity norm of `g0 + sum_i w_i v_i h_i` over `v_i` in
/// `[tau - 1, tau]` for rows with zero residual, divided by `n`.
pub(crate) fn kkt_residual(h: &DMatrix<f64>, y: &[f64], w: &[f64], tau: f64, coef: &DVector<f64>, scale: f64) -> f64 {
    let n = y.len();
    let p = h.ncols();
    let fit = h * coef;
    let tol = 1e-9 * scale;
    let mut g = DVector::<f64>::zeros(p);
    let mut zero_rows = Vec::new();
    for i in 0..n {
        if w[i] == 0.0 {
            continue;
        }
        let r = y[i] - fit[i];
        if r.abs() <= tol {
            zero_rows.push(i);
        } else {
            let d = if r > 0.0 { tau } else { tau - 1.0 };
            for j in 0..p {
                g[j] += w[i] * d * h[(i, j)];
            }
        }
    }
    // Box-constrained least squares over the free subgradients by cyclic
    // coordinate descent, started at the clamped unconstrained solution.
    let k = zero_rows.len();
    let a_mat = DMatrix::from_fn(p, k, |j, c| w[zero_rows[c]] * h[(zero_rows[c], j)]);
    let mut v: Vec<f64> = vec![tau - 0.5; k];
    if k > 0 {
        if let Ok(sol) = a_mat.clone().svd(true, true).solve(&(-&g), 1e-12) {
            for (vk, s) in v.iter_mut().zip(sol.iter()) {
                if s.is_finite() {
                    *vk = s.clamp(tau - 1.0, tau);
                }
            }
        }
    }
    for (k, &i) in zero_rows.iter().enumerate() {
        for j in 0..p {
            g[j] += w[i] * v[k] * h[(i, j)];
        }
    }
    let cols: Vec<Vec<f64>> = zero_rows
        .iter()
        .map(|&i| (0..p).map(|j| w[i] * h[(i, j)]).collect())
        .collect();
    let target = 1e-13 * n as f64;
    for _ in 0..20000 {
        if g.amax() <= target {
            break;
        }
        let mut change = 0.0_f64;
        for k in 0..zero_rows.len() {
            let a = &cols[k];
            let aa: f64 = a.iter().map(|x| x * x).sum();
            if aa == 0.0 {
                continue;
            }
            let ga: f64 = a.iter().zip(g.iter()).map(|(x, y)| x * y).sum();
            let new = (v[k] - ga / aa).clamp(tau - 1.0, tau);
            let dv = new - v[k];
            if dv != 0.0 {
                for j in 0..p {
                    g[j] += dv * a[j];
                }
                v[k] = new;
                change = change.max(dv.abs());
            }
        }
        if change < 1e-14 {
            break;
        }
    }
    g.amax() / n as f64
}

/// Weighted linear quantile regression at level `tau`.
///
/// Rows with zero weight are ignored. The exact check loss is minimized by a
/// continuation path over smoothed losses followed by a basis interpolation
/// step, and the result is certified through the subgradient optimality
/// condition (reported as `kkt_residual`).
pub fn fit_weighted_quantile(h: &DMatrix<f64>, y: &[f64], w: &[f64], tau: f64) -> Result<QuantileFit> {
    let n = h.nrows();
    if y.len() != n || w.len() != n {
        return Err(Error::InvalidInput("outcome, weights and design differ in length".into()));
    }
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::InvalidParameter(format!("tau must lie in [0, 1], got {tau}")));
    }
    if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidInput("weights must be finite and nonnegative".into()));
    }
    let rows: Vec<usize> = (0..n).filter(|i| w[*i] > 0.0).collect();
    if rows.is_empty() {
        return Err(Error::InvalidInput("all quantile weights are zero".into()));
    }
    let hs = h.select_rows(&rows);
    let ys: Vec<f64> = rows.iter().map(|i| y[*i]).collect();
    let ws: Vec<f64> = rows.iter().map(|i| w[*i]).collect();
    let p = h.ncols();
    let scale = outcome_scale(&ys);

    let gram = weighted_gram(&hs, &ws);
    let mut coef = solve_spd(&gram, &xt_vec(&hs, &ws.iter().zip(&ys).map(|(a, b)| a * b).collect::<Vec<_>>()))
        .unwrap_or_else(|| DVector::zeros(p));
    let mut iterations = 0;
    for level in SMOOTHING_LEVELS {
        iterations += newton_smoothed(&hs, &ys, &ws, tau, level * scale, &mut coef);
    }
    let all: Vec<usize> = (0..p).collect();
    let mut best = weighted_check_objective(&hs, &ys, &ws, tau, &coef);
    if let Some(c) = simplex_refine(&hs, &ys, &ws, tau, &coef, &all) {
        let obj = weighted_check_objective(&hs, &ys, &ws, tau, &c);
        if obj <= best + 1e-12 * (1.0 + best.abs()) {
            best = obj;
            coef = c;
        }
    }
    let kkt = kkt_residual(&hs, &ys, &ws, tau, &coef, scale) * rows.len() as f64 / n as f64;
    Ok(QuantileFit {
        objective: best * rows.len() as f64 / n as f64,
        coef,
        kkt_residual: kkt,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn intercept_bernoulli_quantile() {
        let h = DMatrix::from_element(10, 1, 1.0);
        let y: Vec<f64> = (0..10).map(|i| if i < 3 { 0.0 } else { 1.0 }).collect();
        let f = fit_weighted_quantile(&h, &y, &[1.0; 10], 2.0 / 3.0).unwrap();
        assert!((f.coef[0] - 1.0).abs() < 1e-12);
        assert!(f.kkt_residual < 1e-10);
    }

    #[test]
    fn intercept_median_odd_sample() {
        let h = DMatrix::from_element(5, 1, 1.0);
        let y = [3.0, -1.0, 7.0, 2.0, 10.0];
        let f = fit_weighted_quantile(&h, &y, &[1.0; 5], 0.5).unwrap();
        assert!((f.coef[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn zero_weight_rows_ignored() {
        let h = DMatrix::from_element(4, 1, 1.0);
        let y = [0.0, 1.0, 100.0, 100.0];
        let f = fit_weighted_quantile(&h, &y, &[1.0, 3.0, 0.0, 0.0], 0.5).unwrap();
        assert!((f.coef[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn linear_quantile_kkt_certified() {
        let n = 40;
        let h = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { i as f64 / 10.0 });
        let y: Vec<f64> = (0..n).map(|i| 1.0 + 0.5 * i as f64 / 10.0 + ((i * 7919) % 13) as f64 / 13.0).collect();
        let w: Vec<f64> = (0..n).map(|i| 0.5 + (i % 3) as f64).collect();
        let f = fit_weighted_quantile(&h, &y, &w, 0.3).unwrap();
        assert!(f.kkt_residual < 1e-9, "kkt {}", f.kkt_residual);
    }

    #[test]
    fn matches_vertex_enumeration() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let n = 25;
            let h = DMatrix::from_fn(n, 2, |_, j| if j == 0 { 1.0 } else { rng.random_range(-2.0..2.0) });
            let y: Vec<f64> = (0..n).map(|i| h[(i, 1)] + rng.random_range(-1.0..1.0)).collect();
            let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..3.0)).collect();
            let tau = rng.random_range(0.1..0.9);
            let f = fit_weighted_quantile(&h, &y, &w, tau).unwrap();
            let mut best = f64::INFINITY;
            for a in 0..n {
                for b in (a + 1)..n {
                    let dx = h[(b, 1)] - h[(a, 1)];
                    if dx.abs() < 1e-12 {
                        continue;
                    }
                    let slope = (y[b] - y[a]) / dx;
                    let c = DVector::from_vec(vec![y[a] - slope * h[(a, 1)], slope]);
                    best = best.min(weighted_check_objective(&h, &y, &w, tau, &c));
                }
            }
            assert!(f.objective <= best + 1e-12, "{} vs {best}", f.objective);
            assert!(f.kkt_residual < 1e-9);
        }
    }
}
