//! Bounds for binary outcomes indexed by a relative-risk parameter `theta`.
//!
//! Three generations are provided for comparison: the original bounding-factor
//! bounds, the version truncated at the trivial bound `1/p`, and the sharp
//! bounds obtained by restricting the eMSM outcome shifts to the set where the
//! implied risk ratio stays below `theta`. The module also converts between the
//! outcome-shift scale `delta` and `theta`, and covers the difference-based and
//! ratio-based restrictions.

use serde::{Deserialize, Serialize};

use crate::bounds::{tau_of, ArmSummary, Interval};
use crate::{Error, Result};

/// Bounding factor `x y / (x + y - 1)`, extended by `B(inf, y) = y`.
pub fn bounding_factor(x: f64, y: f64) -> f64 {
    match (x.is_infinite(), y.is_infinite()) {
        (true, true) => f64::INFINITY,
        (true, false) => y,
        (false, true) => x,
        (false, false) => x * y / (x + y - 1.0),
    }
}

/// Odds range `[lambda1, lambda2]` and risk-ratio bound `theta >= 1`.
/// `lambda2` and `theta` may be infinite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DvParams {
    pub theta: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl DvParams {
    pub fn new(theta: f64, lambda1: f64, lambda2: f64) -> Result<Self> {
        if theta.is_nan() || theta < 1.0 {
            return Err(Error::InvalidParameter(format!("theta must be at least 1, got {theta}")));
        }
        if !(0.0..=1.0).contains(&lambda1) {
            return Err(Error::InvalidParameter(format!(
                "lambda1 must lie in [0, 1], got {lambda1}"
            )));
        }
        if lambda2.is_nan() || lambda2 < 1.0 {
            return Err(Error::InvalidParameter(format!(
                "lambda2 must be at least 1, got {lambda2}"
            )));
        }
        Ok(Self {
            theta,
            lambda1,
            lambda2,
        })
    }

    pub fn symmetric(theta: f64, lambda: f64) -> Result<Self> {
        if lambda.is_nan() || lambda < 1.0 {
            return Err(Error::InvalidParameter(format!("lambda must be at least 1, got {lambda}")));
        }
        Self::new(theta, 1.0 / lambda, lambda)
    }

    /// `1 / lambda1`, infinite when `lambda1 = 0`.
    pub fn inv_lambda1(&self) -> f64 {
        if self.lambda1 == 0.0 {
            f64::INFINITY
        } else {
            1.0 / self.lambda1
        }
    }
}

/// Outcome probabilities in both arms and the treated share of one stratum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryStratum {
    pub p1: f64,
    pub p0: f64,
    pub prob_t1: f64,
}

impl BinaryStratum {
    pub fn new(p1: f64, p0: f64, prob_t1: f64) -> Result<Self> {
        for (name, v) in [("p1", p1), ("p0", p0), ("prob_t1", prob_t1)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidInput(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        Ok(Self { p1, p0, prob_t1 })
    }
}

/// Bound on a risk ratio. `Undefined` marks a `0/0` ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum RatioBound {
    Finite(f64),
    Infinite,
    Undefined,
}

impl RatioBound {
    pub fn of(num: f64, den: f64) -> Self {
        if den == 0.0 {
            if num == 0.0 {
                RatioBound::Undefined
            } else {
                RatioBound::Infinite
            }
        } else {
            RatioBound::Finite(num / den)
        }
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            RatioBound::Finite(v) => Some(*v),
            RatioBound::Infinite => Some(f64::INFINITY),
            RatioBound::Undefined => None,
        }
    }
}

/// Bounds on both counterfactual means, their difference and their ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DvBounds {
    pub mu1: Interval,
    pub mu0: Interval,
    pub ate: Interval,
    pub crr_lower: RatioBound,
    pub crr_upper: RatioBound,
}

impl DvBounds {
    pub fn from_means(mu1: Interval, mu0: Interval) -> Self {
        Self {
            mu1,
            mu0,
            ate: Interval::new(mu1.lower - mu0.upper, mu1.upper - mu0.lower),
            crr_lower: RatioBound::of(mu1.lower, mu0.upper),
            crr_upper: RatioBound::of(mu1.upper, mu0.lower),
        }
    }
}

/// Original bounding-factor bounds.
pub fn dv_original_bounds(s: &BinaryStratum, params: &DvParams) -> Result<DvBounds> {
    if s.p0 == 0.0 {
        return Err(Error::InvalidInput(
            "risk-ratio bounds are undefined when p0 = 0".into(),
        ));
    }
    let (pt1, pt0) = (s.prob_t1, 1.0 - s.prob_t1);
    let b_up = bounding_factor(params.lambda2, params.theta);
    let b_lo = bounding_factor(params.inv_lambda1(), params.theta);
    let mu1 = Interval::new(s.p1 * (pt1 + pt0 / b_lo), s.p1 * (pt1 + pt0 * b_up));
    let mu0 = Interval::new(s.p0 * (pt0 + pt1 / b_up), s.p0 * (pt0 + pt1 * b_lo));
    Ok(DvBounds::from_means(mu1, mu0))
}

/// Bounding-factor bounds truncated at the trivial bound.
pub fn sjolander_bounds(s: &BinaryStratum, params: &DvParams) -> DvBounds {
    let (pt1, pt0) = (s.prob_t1, 1.0 - s.prob_t1);
    let b_up = bounding_factor(params.lambda2, params.theta);
    let b_lo = bounding_factor(params.inv_lambda1(), params.theta);
    let cap = |p: f64, b: f64| if p == 0.0 { b } else { b.min(1.0 / p) };
    let mu1 = Interval::new(
        s.p1 * (pt1 + pt0 / b_lo),
        mul0(s.p1, pt1 + pt0 * cap(s.p1, b_up)),
    );
    let mu0 = Interval::new(
        s.p0 * (pt0 + pt1 / b_up),
        mul0(s.p0, pt0 + pt1 * cap(s.p0, b_lo)),
    );
    DvBounds::from_means(mu1, mu0)
}

/// Outcome shifts attaining the sharp bounds of one arm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttainingDeltas {
    pub upper_delta1: f64,
    pub upper_delta2: f64,
    pub lower_delta1: f64,
    pub lower_delta2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SharpDvBounds {
    pub bounds: DvBounds,
    pub treated: AttainingDeltas,
    pub control: AttainingDeltas,
}

fn mul0(a: f64, b: f64) -> f64 {
    if a == 0.0 || b == 0.0 {
        0.0
    } else {
        a * b
    }
}

/// Parallel sum `1 / (1/a + 1/b)`, zero if either argument is zero.
fn par(a: f64, b: f64) -> f64 {
    if a == 0.0 || b == 0.0 {
        0.0
    } else {
        1.0 / (1.0 / a + 1.0 / b)
    }
}

fn inv(x: f64) -> f64 {
    if x == 0.0 {
        f64::INFINITY
    } else {
        1.0 / x
    }
}

/// Sharp conditional bounds for an arm with outcome probability `p`, odds
/// range `[lo, hi]` and risk-ratio bound `theta`, returned as
/// `(decrease, increase)` of the conditional mean.
fn sharp_arm_shifts(p: f64, lo: f64, hi: f64, theta: f64) -> (f64, f64) {
    let shrink = 1.0 - inv(theta);
    let up_rr = mul0(shrink * p, par(hi - 1.0, mul0(theta, 1.0 - lo)));
    let up_q = mul0(1.0 - lo, 1.0 - p).min(mul0(hi - 1.0, p));
    let down_rr = mul0(shrink * p, par(1.0 - lo, mul0(theta, hi - 1.0)));
    let down_q = mul0(hi - 1.0, 1.0 - p).min(mul0(1.0 - lo, p));
    (down_rr.min(down_q), up_rr.min(up_q))
}

fn attaining_deltas(p: f64, lo: f64, hi: f64, theta: f64) -> AttainingDeltas {
    let odds = if hi == lo {
        1.0
    } else if lo == 1.0 {
        f64::INFINITY
    } else {
        (hi - 1.0) / (1.0 - lo)
    };
    let a = p * (1.0 - inv(theta));
    let it = inv(theta);
    AttainingDeltas {
        upper_delta1: a / (1.0 + mul0(odds, it)),
        upper_delta2: a / (it + inv(odds)),
        lower_delta1: a / (1.0 + mul0(inv(odds), it)),
        lower_delta2: a / (it + odds),
    }
}

/// Sharp bounds under the eMSM restricted to shifts whose implied risk ratio
/// is at most `theta`.
pub fn dv_sharp_bounds(s: &BinaryStratum, params: &DvParams) -> SharpDvBounds {
    let (pt1, pt0) = (s.prob_t1, 1.0 - s.prob_t1);
    let (lo1, hi1) = (params.lambda1, params.lambda2);
    let (lo0, hi0) = (inv(params.lambda2), params.inv_lambda1());
    let (d1, u1) = sharp_arm_shifts(s.p1, lo1, hi1, params.theta);
    let (d0, u0) = sharp_arm_shifts(s.p0, lo0, hi0, params.theta);
    let mu1 = Interval::new(s.p1 - mul0(pt0, d1), s.p1 + mul0(pt0, u1));
    let mu0 = Interval::new(s.p0 - mul0(pt1, d0), s.p0 + mul0(pt1, u0));
    SharpDvBounds {
        bounds: DvBounds::from_means(mu1, mu0),
        treated: attaining_deltas(s.p1, lo1, hi1, params.theta),
        control: attaining_deltas(s.p0, lo0, hi0, params.theta),
    }
}

/// Implied risk ratio `min(p1 + delta2, 1) / max(p1 - delta1, 0)`.
pub fn theta_feasibility(p1: f64, delta1: f64, delta2: f64) -> f64 {
    let num = (p1 + delta2).min(1.0);
    let den = (p1 - delta1).max(0.0);
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

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundSide {
    Upper,
    Lower,
}

fn odds(x: f64) -> f64 {
    if x >= 1.0 {
        f64::INFINITY
    } else {
        x / (1.0 - x)
    }
}

/// Risk-ratio bound `theta` whose sharp bound coincides with the eMSM bound
/// under the recommended shift scale `delta`, for a stratum with outcome
/// probability `p1`.
pub fn theta_from_delta(delta: f64, tau: f64, p1: f64, side: BoundSide) -> f64 {
    let t = match side {
        BoundSide::Upper => tau,
        BoundSide::Lower => 1.0 - tau,
    };
    let m = odds(t).min(odds(1.0 - p1));
    let num = 1.0 + mul0(delta, m);
    let den = 1.0 - mul0(delta, mul0(odds(1.0 - t), m));
    if den <= 0.0 {
        f64::INFINITY
    } else {
        num / den
    }
}

/// Stratum-free alignment values `(theta_plus, theta_minus)`.
pub fn theta_plus_minus(delta: f64, tau: f64) -> (f64, f64) {
    let f = |o: f64| {
        if delta >= 1.0 {
            f64::INFINITY
        } else {
            (1.0 + mul0(delta, o)) / (1.0 - delta)
        }
    };
    (f(odds(tau)), f(odds(1.0 - tau)))
}

/// `theta` values `{theta_plus/2, theta_plus, 3 theta_plus/2}`; entries below 1
/// are returned as `None`.
pub fn theta_alignment_grid(delta: f64, tau: f64) -> [Option<f64>; 3] {
    let (tp, _) = theta_plus_minus(delta, tau);
    [0.5 * tp, tp, 1.5 * tp].map(|v| (v >= 1.0).then_some(v))
}

/// Quantile level for an odds range, allowing an infinite upper end.
fn level(lambda1: f64, lambda2: f64) -> f64 {
    if lambda2.is_infinite() {
        1.0
    } else {
        tau_of(lambda1, lambda2)
    }
}

/// Conditional bounds under a symmetric shift restriction `|eta - mean| <= big_delta`
/// scaled by `tau (1 - tau)`.
pub fn dmsm_bounds(lambda1: f64, lambda2: f64, big_delta: f64, arm: &ArmSummary) -> Interval {
    let tau = level(lambda1, lambda2);
    let k = lambda2 - lambda1;
    let shift = mul0(tau * (1.0 - tau), big_delta);
    Interval::new(
        arm.cond_mean - k * shift.min(arm.qloss_one_minus_tau),
        arm.cond_mean + k * shift.min(arm.qloss_tau),
    )
}

/// Conditional bounds when the latent regression may differ from the observed
/// one by at most a factor `theta`. Requires a nonnegative conditional mean.
pub fn rmsm_bounds(lambda1: f64, lambda2: f64, theta: f64, arm: &ArmSummary) -> Result<Interval> {
    if arm.cond_mean < 0.0 {
        return Err(Error::InvalidInput(
            "ratio restriction requires a nonnegative outcome mean".into(),
        ));
    }
    if theta.is_nan() || theta < 1.0 {
        return Err(Error::InvalidParameter(format!("theta must be at least 1, got {theta}")));
    }
    let shrink = 1.0 - inv(theta);
    let m = arm.cond_mean;
    let up = mul0(shrink * m, par(lambda2 - 1.0, mul0(theta, 1.0 - lambda1)));
    let down = mul0(shrink * m, par(1.0 - lambda1, mul0(theta, lambda2 - 1.0)));
    let k = lambda2 - lambda1;
    Ok(Interval::new(
        m - down.min(mul0(k, arm.qloss_one_minus_tau)),
        m + up.min(mul0(k, arm.qloss_tau)),
    ))
}

/// Ratio-scale diagnostic `[orr / f, orr f]` with `f = (lambda theta + 1) / (lambda + theta)`.
pub fn relaxed_crr_bounds(orr: f64, lambda: f64, theta: f64) -> Interval {
    let f = if theta.is_infinite() {
        lambda
    } else {
        (lambda * theta + 1.0) / (lambda + theta)
    };
    Interval::new(orr / f, orr * f)
}
