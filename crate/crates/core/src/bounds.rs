//! Closed-form bounds on counterfactual means under the extended marginal
//! sensitivity model (eMSM).
//!
//! A latent confounder `U` may tilt the treatment odds by a factor in
//! `[lambda1, lambda2]` and shift the treated-outcome regression
//! `E(Y | T=1, X, U)` away from `E(Y | T=1, X)` by at most `delta1` downward and
//! `delta2` upward. Everything here works on one covariate stratum at a time;
//! [`aggregate_strata`] and [`aggregate_sample`] lift the conditional bounds to
//! population means.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Tolerance used when comparing a cumulative probability against a level.
const CDF_TOL: f64 = 1e-12;

/// Closed interval `[lower, upper]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn new(lower: f64, upper: f64) -> Self {
        Self { lower, upper }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Restriction on how far the latent regression may move from the observed one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutcomeSpec {
    /// No restriction; reduces to the marginal sensitivity model.
    Unrestricted,
    /// Shift confined to `[-delta1, delta2]`. The same values apply to both arms.
    Explicit { delta1: f64, delta2: f64 },
    /// Shifts proportional to the optimized quantile losses, scaled by `delta` in `[0, 1]`.
    Recommended { delta: f64 },
}

/// Sensitivity parameters `(lambda1, lambda2)` plus the outcome restriction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityParams {
    pub lambda1: f64,
    pub lambda2: f64,
    pub outcome: OutcomeSpec,
}

impl SensitivityParams {
    pub fn new(lambda1: f64, lambda2: f64, outcome: OutcomeSpec) -> Result<Self> {
        if !(lambda1.is_finite() && (0.0..=1.0).contains(&lambda1)) {
            return Err(Error::InvalidParameter(format!(
                "lambda1 must lie in [0, 1], got {lambda1}"
            )));
        }
        if !(lambda2.is_finite() && lambda2 >= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "lambda2 must be finite and at least 1, got {lambda2}"
            )));
        }
        match outcome {
            OutcomeSpec::Unrestricted => {}
            OutcomeSpec::Explicit { delta1, delta2 } => {
                if delta1.is_nan() || delta2.is_nan() || delta1 < 0.0 || delta2 < 0.0 {
                    return Err(Error::InvalidParameter(format!(
                        "outcome shifts must be nonnegative, got ({delta1}, {delta2})"
                    )));
                }
            }
            OutcomeSpec::Recommended { delta } => {
                if !(0.0..=1.0).contains(&delta) {
                    return Err(Error::InvalidParameter(format!(
                        "delta must lie in [0, 1], got {delta}"
                    )));
                }
            }
        }
        Ok(Self {
            lambda1,
            lambda2,
            outcome,
        })
    }

    /// Symmetric odds range `[1/lambda, lambda]`.
    pub fn symmetric(lambda: f64, outcome: OutcomeSpec) -> Result<Self> {
        if !(lambda.is_finite() && lambda >= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "lambda must be finite and at least 1, got {lambda}"
            )));
        }
        Self::new(1.0 / lambda, lambda, outcome)
    }

    pub fn msm(lambda1: f64, lambda2: f64) -> Result<Self> {
        Self::new(lambda1, lambda2, OutcomeSpec::Unrestricted)
    }

    /// Quantile level `(lambda2 - 1) / (lambda2 - lambda1)`, or 1/2 when both equal 1.
    pub fn tau(&self) -> f64 {
        tau_of(self.lambda1, self.lambda2)
    }

    /// `lambda2 - lambda1`.
    pub fn gap(&self) -> f64 {
        self.lambda2 - self.lambda1
    }

    /// Parameters governing the control arm: the odds range becomes
    /// `[1/lambda2, 1/lambda1]`. Requires `lambda1 > 0`.
    pub fn control_arm(&self) -> Result<Self> {
        if self.lambda1 <= 0.0 {
            return Err(Error::InvalidParameter(
                "control-arm bounds need lambda1 > 0".into(),
            ));
        }
        Ok(Self {
            lambda1: 1.0 / self.lambda2,
            lambda2: 1.0 / self.lambda1,
            outcome: self.outcome,
        })
    }
}

pub(crate) fn tau_of(lambda1: f64, lambda2: f64) -> f64 {
    if lambda2 == lambda1 {
        0.5
    } else {
        (lambda2 - 1.0) / (lambda2 - lambda1)
    }
}

/// Check loss `tau (y - q)_+ + (1 - tau) (q - y)_+`.
pub fn check_loss(tau: f64, y: f64, q: f64) -> f64 {
    let r = y - q;
    if r >= 0.0 {
        tau * r
    } else {
        (tau - 1.0) * r
    }
}

/// Optimized check losses `(qloss_tau, qloss_{1-tau})` for a Bernoulli(`p1`) outcome.
pub fn binary_quantile_losses(tau: f64, p1: f64) -> (f64, f64) {
    let q_tau = ((1.0 - tau) * (1.0 - p1)).min(tau * p1);
    let q_comp = ((1.0 - tau) * p1).min(tau * (1.0 - p1));
    (q_tau, q_comp)
}

/// Finitely supported distribution with sorted, distinct support points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteDist {
    support: Vec<f64>,
    probs: Vec<f64>,
}

impl DiscreteDist {
    /// Builds a distribution, sorting the support and merging repeated points.
    pub fn new(support: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        if support.len() != probs.len() || support.is_empty() {
            return Err(Error::InvalidInput(
                "support and probabilities must be nonempty and of equal length".into(),
            ));
        }
        if support.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("support points must be finite".into()));
        }
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::InvalidInput("probabilities must be nonnegative".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "probabilities sum to {total}, expected 1"
            )));
        }
        let mut pairs: Vec<(f64, f64)> = support.into_iter().zip(probs).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut s: Vec<f64> = Vec::with_capacity(pairs.len());
        let mut p: Vec<f64> = Vec::with_capacity(pairs.len());
        for (y, w) in pairs {
            if s.last() == Some(&y) {
                *p.last_mut().unwrap() += w;
            } else {
                s.push(y);
                p.push(w);
            }
        }
        Ok(Self {
            support: s,
            probs: p,
        })
    }

    pub fn bernoulli(p1: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p1) {
            return Err(Error::InvalidInput(format!("p1 must lie in [0, 1], got {p1}")));
        }
        Self::new(vec![0.0, 1.0], vec![1.0 - p1, p1])
    }

    pub fn support(&self) -> &[f64] {
        &self.support
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn mean(&self) -> f64 {
        self.support
            .iter()
            .zip(&self.probs)
            .map(|(y, p)| y * p)
            .sum()
    }

    /// Smallest support point whose cumulative probability reaches `tau`.
    pub fn left_quantile(&self, tau: f64) -> f64 {
        let mut cum = 0.0;
        for (y, p) in self.support.iter().zip(&self.probs) {
            cum += p;
            if cum >= tau - CDF_TOL {
                return *y;
            }
        }
        *self.support.last().unwrap()
    }

    pub fn expected_check_loss(&self, tau: f64, q: f64) -> f64 {
        self.support
            .iter()
            .zip(&self.probs)
            .map(|(y, p)| p * check_loss(tau, *y, q))
            .sum()
    }

    /// `min_q E rho_tau(Y, q)`, attained at [`Self::left_quantile`].
    pub fn quantile_loss(&self, tau: f64) -> f64 {
        self.expected_check_loss(tau, self.left_quantile(tau))
    }

    fn reflected(&self) -> Self {
        let support = self.support.iter().rev().map(|y| -y).collect();
        let probs = self.probs.iter().rev().copied().collect();
        Self { support, probs }
    }
}

/// Per-arm summary of an outcome distribution at a quantile level `tau`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub tau: f64,
    pub cond_mean: f64,
    pub q_tau: f64,
    pub q_one_minus_tau: f64,
    pub qloss_tau: f64,
    pub qloss_one_minus_tau: f64,
}

impl ArmSummary {
    pub fn from_dist(dist: &DiscreteDist, tau: f64) -> Self {
        let q_tau = dist.left_quantile(tau);
        let q_comp = dist.left_quantile(1.0 - tau);
        Self {
            tau,
            cond_mean: dist.mean(),
            q_tau,
            q_one_minus_tau: q_comp,
            qloss_tau: dist.expected_check_loss(tau, q_tau),
            qloss_one_minus_tau: dist.expected_check_loss(1.0 - tau, q_comp),
        }
    }

    /// Summary of a Bernoulli(`p`) outcome.
    pub fn binary(p: f64, tau: f64) -> Self {
        let (qt, qc) = binary_quantile_losses(tau, p);
        Self {
            tau,
            cond_mean: p,
            q_tau: if 1.0 - p >= tau - CDF_TOL { 0.0 } else { 1.0 },
            q_one_minus_tau: if 1.0 - p >= 1.0 - tau - CDF_TOL { 0.0 } else { 1.0 },
            qloss_tau: qt,
            qloss_one_minus_tau: qc,
        }
    }
}

/// Both arms of one covariate stratum. The control block is summarized at the
/// control-arm level `tau'`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionalSummary {
    pub treated: ArmSummary,
    pub control: ArmSummary,
    pub propensity: f64,
}

impl ConditionalSummary {
    pub fn from_dists(
        treated: &DiscreteDist,
        control: &DiscreteDist,
        propensity: f64,
        params: &SensitivityParams,
    ) -> Result<Self> {
        let ctrl = params.control_arm()?;
        Ok(Self {
            treated: ArmSummary::from_dist(treated, params.tau()),
            control: ArmSummary::from_dist(control, ctrl.tau()),
            propensity,
        })
    }
}

/// Product that treats `0 * inf` as 0.
fn mul0(a: f64, b: f64) -> f64 {
    if a == 0.0 || b == 0.0 {
        0.0
    } else {
        a * b
    }
}

/// Ratio with `0/0 = 1` and `x/0 = inf` for `x > 0`.
fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        if num == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        num / den
    }
}

/// Recommended shifts `(delta1, delta2)` given the optimized losses at `tau` and `1 - tau`.
pub fn recommended_deltas(delta: f64, tau: f64, qloss_tau: f64, qloss_comp: f64) -> (f64, f64) {
    if tau >= 0.5 {
        let s = ratio_scale(delta, 1.0 - tau);
        (mul0(s, qloss_comp), mul0(s, qloss_tau))
    } else {
        let s = ratio_scale(delta, tau);
        (mul0(s, qloss_tau), mul0(s, qloss_comp))
    }
}

fn ratio_scale(delta: f64, den: f64) -> f64 {
    if delta == 0.0 {
        0.0
    } else if den == 0.0 {
        f64::INFINITY
    } else {
        delta / den
    }
}

/// Outcome shifts `(delta1, delta2)` implied by `params` for one arm.
pub fn resolve_deltas(params: &SensitivityParams, arm: &ArmSummary) -> (f64, f64) {
    match params.outcome {
        OutcomeSpec::Unrestricted => (f64::INFINITY, f64::INFINITY),
        OutcomeSpec::Explicit { delta1, delta2 } => (delta1, delta2),
        OutcomeSpec::Recommended { delta } => {
            recommended_deltas(delta, arm.tau, arm.qloss_tau, arm.qloss_one_minus_tau)
        }
    }
}

/// Shrinkage factors `(psi_plus, psi_minus)` in `[0, 1]`.
pub fn psi_factors(params: &SensitivityParams, arm: &ArmSummary) -> (f64, f64) {
    let (d1, d2) = resolve_deltas(params, arm);
    let tau = arm.tau;
    let plus = ratio(mul0(tau, d1), arm.qloss_tau)
        .min(ratio(mul0(1.0 - tau, d2), arm.qloss_tau))
        .min(1.0);
    let minus = ratio(mul0(1.0 - tau, d1), arm.qloss_one_minus_tau)
        .min(ratio(mul0(tau, d2), arm.qloss_one_minus_tau))
        .min(1.0);
    (plus, minus)
}

/// Conditional bounds `[nu_minus, nu_plus]` on `E(Y(t) | x)` for the arm
/// summarized by `arm`, with `params` already expressed for that arm.
pub fn emsm_arm_bounds(params: &SensitivityParams, arm: &ArmSummary) -> Interval {
    let (pp, pm) = psi_factors(params, arm);
    let k = params.gap();
    Interval {
        lower: arm.cond_mean - k * pm * arm.qloss_one_minus_tau,
        upper: arm.cond_mean + k * pp * arm.qloss_tau,
    }
}

/// Conditional bounds for both arms of a stratum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionalBounds {
    pub nu1: Interval,
    pub nu0: Interval,
}

pub fn emsm_conditional_bounds(
    params: &SensitivityParams,
    summary: &ConditionalSummary,
) -> Result<ConditionalBounds> {
    let ctrl = params.control_arm()?;
    Ok(ConditionalBounds {
        nu1: emsm_arm_bounds(params, &summary.treated),
        nu0: emsm_arm_bounds(&ctrl, &summary.control),
    })
}

/// Bounds on `E(Y(1) | x)` for a binary outcome with `P(Y=1 | T=1, x) = p1`
/// and `P(T=0 | x) = prob_t0`.
pub fn emsm_binary_bounds(params: &SensitivityParams, p1: f64, prob_t0: f64) -> Interval {
    let arm = ArmSummary::binary(p1, params.tau());
    let nu = emsm_arm_bounds(params, &arm);
    Interval {
        lower: p1 + prob_t0 * (nu.lower - p1),
        upper: p1 + prob_t0 * (nu.upper - p1),
    }
}

/// Relaxed upper bound with the check loss evaluated at an arbitrary `q`.
/// Its infimum over `q` is the sharp upper bound.
pub fn dual_bound_at_q(params: &SensitivityParams, dist: &DiscreteDist, q: f64) -> f64 {
    let tau = params.tau();
    let arm = ArmSummary::from_dist(dist, tau);
    let (d1, d2) = resolve_deltas(params, &arm);
    let inner = mul0(tau, d1)
        .min(mul0(1.0 - tau, d2))
        .min(dist.expected_check_loss(tau, q));
    arm.cond_mean + params.gap() * inner
}

/// Relaxed lower bound at `q`; its supremum over `q` is the sharp lower bound.
pub fn dual_lower_bound_at_q(params: &SensitivityParams, dist: &DiscreteDist, q: f64) -> f64 {
    let tau = params.tau();
    let arm = ArmSummary::from_dist(dist, tau);
    let (d1, d2) = resolve_deltas(params, &arm);
    let inner = mul0(1.0 - tau, d1)
        .min(mul0(tau, d2))
        .min(dist.expected_check_loss(1.0 - tau, q));
    arm.cond_mean - params.gap() * inner
}

/// Lower bound reported when the recommended shifts are tuned for the upper
/// bound only: `mean - (lambda2 - lambda1) delta (1 - tau) / tau * qloss_tau`.
pub fn lower_bound_under_upper_spec(params: &SensitivityParams, arm: &ArmSummary) -> Result<f64> {
    let OutcomeSpec::Recommended { delta } = params.outcome else {
        return Err(Error::InvalidParameter(
            "the upper-only diagnostic needs a recommended outcome spec".into(),
        ));
    };
    if arm.tau <= 0.0 {
        return Ok(arm.cond_mean);
    }
    Ok(arm.cond_mean - params.gap() * delta * (1.0 - arm.tau) / arm.tau * arm.qloss_tau)
}

/// Latent binary confounder that attains a conditional bound.
///
/// `laws[u][k]` is `P(Y = support[k] | T=1, U=u)`; `prob_u1` is `P(U=1 | T=1)`
/// and `lambda[u]` is the odds ratio of treatment for `U=u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorstCaseConstruction {
    pub support: Vec<f64>,
    pub laws: [Vec<f64>; 2],
    pub prob_u1: f64,
    pub lambda: [f64; 2],
    pub eta: [f64; 2],
    pub q_star: f64,
    pub psi: f64,
}

impl WorstCaseConstruction {
    /// Construction attaining the upper bound on `E(Y(1) | x)`.
    pub fn upper(params: &SensitivityParams, dist: &DiscreteDist) -> Self {
        let tau = params.tau();
        let arm = ArmSummary::from_dist(dist, tau);
        let (psi, _) = psi_factors(params, &arm);
        let q = arm.q_tau;
        let c = 1.0 - tau;
        let support = dist.support().to_vec();
        let probs = dist.probs();
        let above: f64 = support
            .iter()
            .zip(probs)
            .filter(|(y, _)| **y > q)
            .map(|(_, p)| p)
            .sum();
        let below: f64 = support
            .iter()
            .zip(probs)
            .filter(|(y, _)| **y < q)
            .map(|(_, p)| p)
            .sum();

        let mut law1 = probs.to_vec();
        let mut law0 = probs.to_vec();
        for (k, y) in support.iter().enumerate() {
            let p = probs[k];
            if c > 0.0 {
                law1[k] = if *y > q {
                    p * (1.0 + tau / c * psi)
                } else if *y < q {
                    p * (1.0 - psi)
                } else {
                    (1.0 - psi) * p + psi * (1.0 - above / c)
                };
            }
            if tau > 0.0 {
                law0[k] = if *y > q {
                    p * (1.0 - psi)
                } else if *y < q {
                    p * (1.0 + c / tau * psi)
                } else {
                    (1.0 - psi) * p + psi * (1.0 - below / tau)
                };
            }
        }
        for law in [&mut law0, &mut law1] {
            for v in law.iter_mut() {
                if *v < 0.0 && *v > -1e-14 {
                    *v = 0.0;
                }
            }
        }
        let eta0 = support.iter().zip(&law0).map(|(y, p)| y * p).sum();
        let eta1 = support.iter().zip(&law1).map(|(y, p)| y * p).sum();
        Self {
            support,
            laws: [law0, law1],
            prob_u1: c,
            lambda: [params.lambda1, params.lambda2],
            eta: [eta0, eta1],
            q_star: q,
            psi,
        }
    }

    /// Construction attaining the lower bound, obtained by reflecting `Y`.
    pub fn lower(params: &SensitivityParams, dist: &DiscreteDist) -> Self {
        let arm = ArmSummary::from_dist(dist, params.tau());
        let (d1, d2) = resolve_deltas(params, &arm);
        let reflected_params = SensitivityParams {
            outcome: OutcomeSpec::Explicit {
                delta1: d2,
                delta2: d1,
            },
            ..*params
        };
        let mut c = Self::upper(&reflected_params, &dist.reflected());
        c.support = c.support.iter().rev().map(|y| -y).collect();
        for law in c.laws.iter_mut() {
            law.reverse();
        }
        c.eta = [-c.eta[0], -c.eta[1]];
        c.q_star = -c.q_star;
        c
    }

    /// `sum_u lambda(u) P(U=u | T=1) eta(u)`, the implied `E(Y(1) | T=0, x)`.
    pub fn attained_value(&self) -> f64 {
        let c = self.prob_u1;
        self.lambda[0] * (1.0 - c) * self.eta[0] + self.lambda[1] * c * self.eta[1]
    }
}

/// Ingredients of one stratum for population aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StratumBounds {
    pub weight: f64,
    pub propensity: f64,
    pub treated_mean: f64,
    pub control_mean: f64,
    pub nu1: Interval,
    pub nu0: Interval,
}

/// Population bounds on both counterfactual means and their difference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopulationBounds {
    pub mu1: Interval,
    pub mu0: Interval,
    pub ate: Interval,
}

impl PopulationBounds {
    fn from_means(mu1: Interval, mu0: Interval) -> Self {
        Self {
            mu1,
            mu0,
            ate: Interval::new(mu1.lower - mu0.upper, mu1.upper - mu0.lower),
        }
    }
}

/// `mu1 = E{pi m1 + (1 - pi) nu1}` and `mu0 = E{(1 - pi) m0 + pi nu0}` over strata.
pub fn aggregate_strata(strata: &[StratumBounds]) -> Result<PopulationBounds> {
    let total: f64 = strata.iter().map(|s| s.weight).sum();
    if strata.is_empty() || (total - 1.0).abs() > 1e-10 || strata.iter().any(|s| s.weight < 0.0) {
        return Err(Error::InvalidInput(format!(
            "stratum weights must be nonnegative and sum to 1, got {total}"
        )));
    }
    let mut mu1 = Interval::new(0.0, 0.0);
    let mut mu0 = Interval::new(0.0, 0.0);
    for s in strata {
        let pi = s.propensity;
        mu1.lower += s.weight * (pi * s.treated_mean + (1.0 - pi) * s.nu1.lower);
        mu1.upper += s.weight * (pi * s.treated_mean + (1.0 - pi) * s.nu1.upper);
        mu0.lower += s.weight * ((1.0 - pi) * s.control_mean + pi * s.nu0.lower);
        mu0.upper += s.weight * ((1.0 - pi) * s.control_mean + pi * s.nu0.upper);
    }
    Ok(PopulationBounds::from_means(mu1, mu0))
}

/// Sample version of the treated-arm aggregation: `mean{T Y + (1 - T) nu}`.
pub fn aggregate_sample(t: &[bool], y: &[f64], nu: &[Interval]) -> Result<Interval> {
    if t.len() != y.len() || y.len() != nu.len() || t.is_empty() {
        return Err(Error::InvalidInput(
            "treatment, outcome and bound vectors must share a nonzero length".into(),
        ));
    }
    let n = t.len() as f64;
    let mut out = Interval::new(0.0, 0.0);
    for i in 0..t.len() {
        if t[i] {
            out.lower += y[i];
            out.upper += y[i];
        } else {
            out.lower += nu[i].lower;
            out.upper += nu[i].upper;
        }
    }
    out.lower /= n;
    out.upper /= n;
    Ok(out)
}
