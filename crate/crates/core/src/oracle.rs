//! Brute-force reference solutions used to validate the closed-form bounds.
//!
//! [`enumerate_emsm_bound`] searches over latent binary confounders directly:
//! the share `c = P(U=1 | T=1)`, the odds ratio `lambda(1)` and the mean of the
//! outcome within `U=1`. Every candidate is checked against the model
//! constraints by [`evaluate_construction`], which knows nothing about the
//! closed forms. Nothing in this module calls into [`crate::bounds`] except
//! [`duality_scan`], whose job is to exercise the relaxed bound.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bounds::{dual_bound_at_q, emsm_arm_bounds, ArmSummary, DiscreteDist, OutcomeSpec, SensitivityParams};
use crate::{Error, Result};

/// One conditional bound problem with explicit outcome shifts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleProblem {
    pub dist: DiscreteDist,
    pub lambda1: f64,
    pub lambda2: f64,
    pub delta1: f64,
    pub delta2: f64,
}

fn pinball(tau: f64, r: f64) -> f64 {
    if r >= 0.0 {
        tau * r
    } else {
        (tau - 1.0) * r
    }
}

/// `min_q E rho_tau(Y, q)` by scanning every support point.
pub fn brute_quantile_loss(dist: &DiscreteDist, tau: f64) -> f64 {
    dist.support()
        .iter()
        .map(|q| {
            dist.support()
                .iter()
                .zip(dist.probs())
                .map(|(y, p)| p * pinball(tau, y - q))
                .sum::<f64>()
        })
        .fold(f64::INFINITY, f64::min)
}

fn level(lambda1: f64, lambda2: f64) -> f64 {
    if lambda1 == lambda2 {
        0.5
    } else {
        (lambda2 - 1.0) / (lambda2 - lambda1)
    }
}

impl OracleProblem {
    /// Resolves the outcome specification with brute-force quantile losses.
    pub fn from_spec(dist: DiscreteDist, lambda1: f64, lambda2: f64, spec: OutcomeSpec) -> Self {
        let tau = level(lambda1, lambda2);
        let (delta1, delta2) = match spec {
            OutcomeSpec::Unrestricted => (f64::INFINITY, f64::INFINITY),
            OutcomeSpec::Explicit { delta1, delta2 } => (delta1, delta2),
            OutcomeSpec::Recommended { delta } => {
                let lt = brute_quantile_loss(&dist, tau);
                let lc = brute_quantile_loss(&dist, 1.0 - tau);
                let (num_small, num_large) = if tau >= 0.5 { (lc, lt) } else { (lt, lc) };
                let den = if tau >= 0.5 { 1.0 - tau } else { tau };
                let scale = |l: f64| {
                    if delta == 0.0 || l == 0.0 {
                        0.0
                    } else {
                        delta / den * l
                    }
                };
                (scale(num_small), scale(num_large))
            }
        };
        Self {
            dist,
            lambda1,
            lambda2,
            delta1,
            delta2,
        }
    }

    pub fn tau(&self) -> f64 {
        level(self.lambda1, self.lambda2)
    }
}

/// Latent binary confounder for the treated arm of one stratum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentConstruction {
    pub laws: [Vec<f64>; 2],
    pub prob_u1: f64,
    pub lambda: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstructionCheck {
    pub objective: f64,
    pub eta: [f64; 2],
    pub max_violation: f64,
    pub violations: Vec<String>,
}

impl ConstructionCheck {
    pub fn feasible(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks a latent construction against every model constraint and reports
/// the implied `E(Y(1) | T=0, x) = sum_u lambda(u) P(U=u | T=1) eta(u)`.
pub fn evaluate_construction(
    problem: &OracleProblem,
    c: &LatentConstruction,
    tol: f64,
) -> ConstructionCheck {
    let support = problem.dist.support();
    let probs = problem.dist.probs();
    let mut violations = Vec::new();
    let mut worst: f64 = 0.0;
    let mut flag = |name: String, amount: f64, violations: &mut Vec<String>| {
        worst = worst.max(amount);
        if amount > tol {
            violations.push(format!("{name}: {amount:.3e}"));
        }
    };

    let pu = [1.0 - c.prob_u1, c.prob_u1];
    flag("P(U=1|T=1) outside [0,1]".into(), (-c.prob_u1).max(c.prob_u1 - 1.0), &mut violations);
    let mut eta = [0.0; 2];
    for u in 0..2 {
        if pu[u] <= 0.0 {
            continue;
        }
        let law = &c.laws[u];
        if law.len() != support.len() {
            violations.push(format!("law {u} has the wrong length"));
            continue;
        }
        let neg = law.iter().fold(0.0_f64, |m, v| m.max(-v));
        flag(format!("law {u} negative"), neg, &mut violations);
        let total: f64 = law.iter().sum();
        flag(format!("law {u} not normalized"), (total - 1.0).abs(), &mut violations);
        eta[u] = support.iter().zip(law).map(|(y, p)| y * p).sum();
        let lam = c.lambda[u];
        flag(
            format!("lambda({u}) outside range"),
            (problem.lambda1 - lam).max(lam - problem.lambda2),
            &mut violations,
        );
    }
    for (k, pk) in probs.iter().enumerate() {
        let mix: f64 = (0..2)
            .filter(|u| pu[*u] > 0.0)
            .map(|u| pu[u] * c.laws[u].get(k).copied().unwrap_or(0.0))
            .sum();
        flag(format!("mixture differs at support point {k}"), (mix - pk).abs(), &mut violations);
    }
    let norm: f64 = (0..2).map(|u| c.lambda[u] * pu[u]).sum();
    flag("odds weights do not average to 1".into(), (norm - 1.0).abs(), &mut violations);
    let mean = problem.dist.mean();
    for u in 0..2 {
        if pu[u] <= 0.0 {
            continue;
        }
        let shift = eta[u] - mean;
        let excess = if problem.delta2.is_finite() { shift - problem.delta2 } else { f64::NEG_INFINITY };
        let deficit = if problem.delta1.is_finite() { -shift - problem.delta1 } else { f64::NEG_INFINITY };
        flag(format!("eta({u}) shift outside range"), excess.max(deficit), &mut violations);
    }
    let objective = (0..2).map(|u| c.lambda[u] * pu[u] * eta[u]).sum();
    ConstructionCheck {
        objective,
        eta,
        max_violation: worst,
        violations,
    }
}

/// Extreme allocations of mass `c` to `U=1`: fractions taken from the top and
/// from the bottom of the support, with the resulting conditional means.
struct Fill {
    top: Vec<f64>,
    bottom: Vec<f64>,
    hi: f64,
    lo: f64,
}

fn fill(dist: &DiscreteDist, c: f64) -> Fill {
    let p = dist.probs();
    let y = dist.support();
    let n = p.len();
    let take = |order: &mut dyn Iterator<Item = usize>| {
        let mut frac = vec![0.0; n];
        let mut left = c;
        for k in order {
            if left <= 0.0 {
                break;
            }
            let m = p[k].min(left);
            frac[k] = if p[k] > 0.0 { m / p[k] } else { 0.0 };
            left -= m;
        }
        frac
    };
    let top = take(&mut (0..n).rev());
    let bottom = take(&mut (0..n));
    let mean_of = |f: &[f64]| (0..n).map(|k| f[k] * p[k] * y[k]).sum::<f64>() / c;
    Fill {
        hi: mean_of(&top),
        lo: mean_of(&bottom),
        top,
        bottom,
    }
}

fn build_construction(dist: &DiscreteDist, c: f64, lam1: f64, lam0: f64, eta1: f64) -> LatentConstruction {
    let f = fill(dist, c);
    let theta = if f.hi - f.lo > 0.0 {
        ((eta1 - f.lo) / (f.hi - f.lo)).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let p = dist.probs();
    let mut law1 = Vec::with_capacity(p.len());
    let mut law0 = Vec::with_capacity(p.len());
    for (k, pk) in p.iter().enumerate() {
        let a = theta * f.top[k] + (1.0 - theta) * f.bottom[k];
        law1.push(a * pk / c);
        law0.push((1.0 - a) * pk / (1.0 - c));
    }
    LatentConstruction {
        laws: [law0, law1],
        prob_u1: c,
        lambda: [lam0, lam1],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub upper: f64,
    pub lower: f64,
    /// Worst-case shortfall of the grid optimum relative to the true optimum.
    pub slack: f64,
    pub argmax: LatentConstruction,
    pub argmin: LatentConstruction,
    pub evaluated: usize,
}

/// Grid slack `2 L / resolution` with `L = (lambda2 - lambda1) R (1/t + 1/t^2)`,
/// `t = min(tau, 1 - tau)` and `R` the range of the support.
pub fn grid_slack(problem: &OracleProblem, resolution: usize) -> f64 {
    let tau = problem.tau();
    if problem.lambda2 == 1.0 || problem.lambda1 == 1.0 {
        return 0.0;
    }
    let s = problem.dist.support();
    let range = s[s.len() - 1] - s[0];
    let t = tau.min(1.0 - tau);
    2.0 / resolution as f64 * (problem.lambda2 - problem.lambda1) * range * (1.0 / t + 1.0 / (t * t))
}

/// Searches latent binary confounders on a grid of resolution `resolution` in
/// `c` and `lambda(1)`, with the conditional mean of `U=1` set to both ends of
/// its feasible range and to `resolution + 1` evenly spaced interior values.
pub fn enumerate_emsm_bound(problem: &OracleProblem, resolution: usize) -> Result<OracleResult> {
    if resolution < 2 {
        return Err(Error::InvalidParameter("oracle resolution must be at least 2".into()));
    }
    let (l1, l2) = (problem.lambda1, problem.lambda2);
    let mean = problem.dist.mean();
    let r = resolution as f64;
    let mut best_hi = (f64::NEG_INFINITY, 0.0, 0.0, 0.0, 0.0);
    let mut best_lo = (f64::INFINITY, 0.0, 0.0, 0.0, 0.0);
    let mut evaluated = 0usize;
    let lam_steps = if l1 == l2 { 0 } else { resolution };

    for i in 1..resolution {
        let c = i as f64 / r;
        let f = fill(&problem.dist, c);
        // Shift constraints on U=1 and, through the mean identity, on U=0.
        let mut lo = f.lo;
        let mut hi = f.hi;
        if problem.delta1.is_finite() {
            lo = lo.max(mean - problem.delta1);
            hi = hi.min(mean + (1.0 - c) / c * problem.delta1);
        }
        if problem.delta2.is_finite() {
            hi = hi.min(mean + problem.delta2);
            lo = lo.max(mean - (1.0 - c) / c * problem.delta2);
        }
        if lo > hi + 1e-12 {
            continue;
        }
        let hi = hi.max(lo);
        for j in 0..=lam_steps {
            let lam1 = if lam_steps == 0 { l1 } else { l1 + (l2 - l1) * j as f64 / r };
            let lam0 = (1.0 - c * lam1) / (1.0 - c);
            if lam0 < l1 - 1e-12 || lam0 > l2 + 1e-12 {
                continue;
            }
            let mut consider = |eta1: f64| {
                let eta0 = (mean - c * eta1) / (1.0 - c);
                let obj = c * lam1 * eta1 + (1.0 - c) * lam0 * eta0;
                if obj > best_hi.0 {
                    best_hi = (obj, c, lam1, lam0, eta1);
                }
                if obj < best_lo.0 {
                    best_lo = (obj, c, lam1, lam0, eta1);
                }
            };
            consider(lo);
            consider(hi);
            for k in 0..=resolution {
                consider(lo + (hi - lo) * k as f64 / r);
            }
            evaluated += resolution + 3;
        }
    }
    if !best_hi.0.is_finite() {
        return Err(Error::InvalidInput("no feasible latent construction on the grid".into()));
    }
    let argmax = build_construction(&problem.dist, best_hi.1, best_hi.2, best_hi.3, best_hi.4);
    let argmin = build_construction(&problem.dist, best_lo.1, best_lo.2, best_lo.3, best_lo.4);
    Ok(OracleResult {
        upper: best_hi.0,
        lower: best_lo.0,
        slack: grid_slack(problem, resolution),
        argmax,
        argmin,
        evaluated,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DvOracleResult {
    pub upper: f64,
    pub lower: f64,
    pub slack: f64,
    pub argmax_deltas: (f64, f64),
    pub argmin_deltas: (f64, f64),
}

/// Maximizes and minimizes the binary-outcome eMSM bound over shift pairs on a
/// grid, keeping pairs whose implied risk ratio is at most `theta`.
pub fn enumerate_dv_bound(
    p1: f64,
    prob_t0: f64,
    lambda1: f64,
    lambda2: f64,
    theta: f64,
    resolution: usize,
) -> DvOracleResult {
    let tau = level(lambda1, lambda2);
    let k = lambda2 - lambda1;
    let ql_t = ((1.0 - tau) * (1.0 - p1)).min(tau * p1);
    let ql_c = ((1.0 - tau) * p1).min(tau * (1.0 - p1));
    let r = resolution as f64;
    let mut up = (f64::NEG_INFINITY, (0.0, 0.0));
    let mut dn = (f64::INFINITY, (0.0, 0.0));
    for i in 0..=resolution {
        let d1 = p1 * i as f64 / r;
        for j in 0..=resolution {
            let d2 = (1.0 - p1) * j as f64 / r;
            let num = (p1 + d2).min(1.0);
            let den = (p1 - d1).max(0.0);
            let ratio = if den > 0.0 {
                num / den
            } else if num > 0.0 {
                f64::INFINITY
            } else {
                1.0
            };
            if ratio > theta * (1.0 + 1e-12) {
                continue;
            }
            let hi = p1 + prob_t0 * k * (tau * d1).min((1.0 - tau) * d2).min(ql_t);
            let lo = p1 - prob_t0 * k * ((1.0 - tau) * d1).min(tau * d2).min(ql_c);
            if hi > up.0 {
                up = (hi, (d1, d2));
            }
            if lo < dn.0 {
                dn = (lo, (d1, d2));
            }
        }
    }
    DvOracleResult {
        upper: up.0,
        lower: dn.0,
        slack: 2.0 / r * prob_t0 * k,
        argmax_deltas: up.1,
        argmin_deltas: dn.1,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualityScan {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub min_value: f64,
    pub argmin: Vec<f64>,
    pub sharp_bound: f64,
    pub q_star: f64,
    pub q_star_in_argmin: bool,
}

/// Evaluates the relaxed upper bound over `grid` and compares its minimum with
/// the sharp bound.
pub fn duality_scan(params: &SensitivityParams, dist: &DiscreteDist, grid: &[f64]) -> DualityScan {
    let values: Vec<f64> = grid.iter().map(|q| dual_bound_at_q(params, dist, *q)).collect();
    let min_value = values.iter().copied().fold(f64::INFINITY, f64::min);
    let tol = 1e-12 * (1.0 + min_value.abs());
    let argmin = grid
        .iter()
        .zip(&values)
        .filter(|(_, v)| **v <= min_value + tol)
        .map(|(q, _)| *q)
        .collect();
    let arm = ArmSummary::from_dist(dist, params.tau());
    let q_star = arm.q_tau;
    let at_star = dual_bound_at_q(params, dist, q_star);
    DualityScan {
        grid: grid.to_vec(),
        values,
        min_value,
        argmin,
        sharp_bound: emsm_arm_bounds(params, &arm).upper,
        q_star,
        q_star_in_argmin: at_star <= min_value + tol,
    }
}

/// Support points plus `per_gap` evenly spaced points inside each gap and one
/// step beyond each end.
pub fn q_grid(dist: &DiscreteDist, per_gap: usize) -> Vec<f64> {
    let s = dist.support();
    let mut out = Vec::new();
    let step = if s.len() > 1 { (s[s.len() - 1] - s[0]) / s.len() as f64 } else { 1.0 };
    out.push(s[0] - step);
    for w in s.windows(2) {
        out.push(w[0]);
        for k in 1..=per_gap {
            out.push(w[0] + (w[1] - w[0]) * k as f64 / (per_gap + 1) as f64);
        }
    }
    out.push(s[s.len() - 1]);
    out.push(s[s.len() - 1] + step);
    out
}

/// Random distribution with 1 to `max_support` integer-valued support points
/// in `[-5, 5]` and Dirichlet-like probabilities.
pub fn random_discrete_dist<R: Rng + ?Sized>(rng: &mut R, max_support: usize) -> DiscreteDist {
    let size = rng.random_range(1..=max_support.max(1));
    let mut points: Vec<f64> = Vec::with_capacity(size);
    while points.len() < size {
        let v = rng.random_range(-10..=10) as f64 / 2.0;
        if !points.contains(&v) {
            points.push(v);
        }
    }
    let raw: Vec<f64> = (0..size).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let total: f64 = raw.iter().sum();
    let probs = raw.iter().map(|w| w / total).collect();
    DiscreteDist::new(points, probs).expect("valid random distribution")
}
