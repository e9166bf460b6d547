//! Doubly robust sample bounds under the recommended outcome specification.
//!
//! For each arm and side the pipeline fits a calibrated propensity model, a
//! weighted quantile regression for the relevant quantile level and a
//! weighted least-squares regression of the transformed response, then
//! averages the augmented inverse-probability-weighted estimating function.
//! Variances are the empirical second moments of the centered estimating
//! function and intervals are Wald intervals.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::bounds::{check_loss, Interval, OutcomeSpec, SensitivityParams};
use crate::fit::{
    fit_cal_logistic, fit_lasso_path_cv, fit_weighted_ls, fit_weighted_quantile, propensity_scores, Arm, Design,
    LassoConfig, LassoLoss, PROPENSITY_CLIP,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Upper,
    Lower,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    /// Calibrated estimation for low-dimensional working models.
    Cal,
    /// Lasso-regularized calibrated estimation with cross-validated penalties.
    Rcal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimand {
    Mu1,
    Mu0,
    Ate,
    Crr,
}

impl Estimand {
    pub fn as_str(&self) -> &'static str {
        match self {
            Estimand::Mu1 => "mu1",
            Estimand::Mu0 => "mu0",
            Estimand::Ate => "ate",
            Estimand::Crr => "crr",
        }
    }
}

/// Arm-specific constants of the estimating function: the odds gap, the
/// outcome scaling `delta` and the upper quantile level `tau`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhiParams {
    pub gap: f64,
    pub delta: f64,
    pub tau: f64,
}

impl PhiParams {
    /// The control arm uses the reciprocal odds range `(1/lambda2, 1/lambda1)`.
    pub fn for_arm(params: &SensitivityParams, arm: Arm) -> Result<Self> {
        let OutcomeSpec::Recommended { delta } = params.outcome else {
            return Err(Error::InvalidParameter(
                "sample estimation requires the recommended outcome specification".into(),
            ));
        };
        let p = match arm {
            Arm::Treated => *params,
            Arm::Control => params.control_arm()?,
        };
        Ok(Self {
            gap: p.gap(),
            delta,
            tau: p.tau(),
        })
    }

    /// Quantile level targeted on the given side: `tau` or `1 - tau`.
    pub fn level(&self, side: Side) -> f64 {
        match side {
            Side::Upper => self.tau,
            Side::Lower => 1.0 - self.tau,
        }
    }
}

/// `Y + gap delta rho_tau(Y, q)` on the upper side and
/// `Y - gap delta rho_{1-tau}(Y, q)` on the lower side.
pub fn transformed_response(side: Side, y: f64, q: f64, p: &PhiParams) -> f64 {
    let shift = p.gap * p.delta * check_loss(p.level(side), y, q);
    match side {
        Side::Upper => y + shift,
        Side::Lower => y - shift,
    }
}

/// Observed values and nuisance predictions for one unit. `pi` is always
/// `P(T=1 | X)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitValues {
    pub t: bool,
    pub y: f64,
    pub pi: f64,
    pub q: f64,
    pub m: f64,
}

/// Augmented inverse-probability-weighted estimating function for one unit.
/// For the treated arm and upper side it is
/// `T/pi Y + T (1-pi)/pi gap delta rho_tau(Y, q) - (T/pi - 1) m`.
pub fn phi_eval(side: Side, arm: Arm, u: &UnitValues, p: &PhiParams) -> Result<f64> {
    if !(u.pi > 0.0 && u.pi < 1.0) {
        return Err(Error::InvalidInput(format!("propensity {} outside (0, 1)", u.pi)));
    }
    let (ind, p_arm) = match arm {
        Arm::Treated => (u.t, u.pi),
        Arm::Control => (!u.t, 1.0 - u.pi),
    };
    if !ind {
        return Ok(u.m);
    }
    let ipw = 1.0 / p_arm;
    let odds = (1.0 - p_arm) / p_arm;
    let shift = p.gap * p.delta * check_loss(p.level(side), u.y, u.q);
    let signed = match side {
        Side::Upper => shift,
        Side::Lower => -shift,
    };
    Ok(ipw * u.y + odds * signed - (ipw - 1.0) * u.m)
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Point estimate with its influence-function variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundEstimate {
    pub estimate: f64,
    /// `mean{(phi - estimate)^2}`.
    pub variance: f64,
    /// `sqrt(variance / n)`.
    pub se: f64,
}

impl BoundEstimate {
    pub fn from_phi(phi: &[f64]) -> Result<Self> {
        if phi.is_empty() {
            return Err(Error::InvalidInput("no units".into()));
        }
        let n = phi.len() as f64;
        let estimate = phi.iter().sum::<f64>() / n;
        let variance = phi.iter().map(|v| (v - estimate).powi(2)).sum::<f64>() / n;
        Ok(Self {
            estimate,
            variance,
            se: (variance / n).sqrt(),
        })
    }
}

/// Bounds on one estimand with Wald intervals at level `1 - c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub estimand: Estimand,
    pub lower: BoundEstimate,
    pub upper: BoundEstimate,
    pub level: f64,
    /// `[lower - z_c se_lower, upper + z_c se_upper]`; each endpoint is a
    /// one-sided bound at level `1 - c`.
    pub ci_one_sided: Interval,
    /// Same with `z_{c/2}`; covers the whole bound interval at level `1 - c`.
    pub ci_two_sided: Interval,
    #[serde(skip)]
    pub phi_lower: Vec<f64>,
    #[serde(skip)]
    pub phi_upper: Vec<f64>,
}

impl EstimateReport {
    pub fn from_phi(estimand: Estimand, phi_lower: Vec<f64>, phi_upper: Vec<f64>, level: f64) -> Result<Self> {
        let lower = BoundEstimate::from_phi(&phi_lower)?;
        let upper = BoundEstimate::from_phi(&phi_upper)?;
        let (ci_one_sided, ci_two_sided) = wald_intervals(&lower, &upper, level)?;
        Ok(Self {
            estimand,
            lower,
            upper,
            level,
            ci_one_sided,
            ci_two_sided,
            phi_lower,
            phi_upper,
        })
    }

    pub fn bounds(&self) -> Interval {
        Interval::new(self.lower.estimate, self.upper.estimate)
    }
}

/// One-sided and two-sided Wald intervals around a pair of bound estimates.
pub fn wald_intervals(lower: &BoundEstimate, upper: &BoundEstimate, level: f64) -> Result<(Interval, Interval)> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidParameter(format!("level must lie in (0, 1), got {level}")));
    }
    let c = 1.0 - level;
    let z1 = normal_quantile(1.0 - c);
    let z2 = normal_quantile(1.0 - c / 2.0);
    Ok((
        Interval::new(lower.estimate - z1 * lower.se, upper.estimate + z1 * upper.se),
        Interval::new(lower.estimate - z2 * lower.se, upper.estimate + z2 * upper.se),
    ))
}

/// Outcome, treatment and working-model designs: `f` for the propensity and
/// outcome-mean models, `h` for the quantile model.
#[derive(Debug, Clone, Copy)]
pub struct EstimationInput<'a> {
    pub y: &'a [f64],
    pub t: &'a [bool],
    pub f: &'a Design,
    pub h: &'a Design,
}

impl EstimationInput<'_> {
    fn validate(&self) -> Result<()> {
        let n = self.y.len();
        if n == 0 {
            return Err(Error::InvalidInput("no units".into()));
        }
        if self.t.len() != n || self.f.nrows() != n || self.h.nrows() != n {
            return Err(Error::InvalidInput("outcome, treatment and designs differ in length".into()));
        }
        if self.y.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("outcome contains non-finite values".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationConfig {
    pub method: Method,
    pub level: f64,
    pub lasso: LassoConfig,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self {
            method: Method::Cal,
            level: 0.9,
            lasso: LassoConfig::default(),
        }
    }
}

/// Fitted propensity model for one arm's pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct PropensityFit {
    pub arm: Arm,
    pub coef: DVector<f64>,
    pub pi: Vec<f64>,
    /// Gradient norm for CAL, KKT residual for RCAL.
    pub residual: f64,
    pub kappa: Option<f64>,
}

pub fn fit_propensity(input: &EstimationInput, arm: Arm, config: &EstimationConfig) -> Result<PropensityFit> {
    input.validate()?;
    let (coef, residual, kappa) = match config.method {
        Method::Cal => {
            let fit = fit_cal_logistic(input.f, input.t, arm)?;
            (fit.coef, fit.grad_norm, None)
        }
        Method::Rcal => {
            let loss = LassoLoss::CalLogistic {
                t: input.t.to_vec(),
                arm,
            };
            let path = fit_lasso_path_cv(&loss, &input.f.matrix, &config.lasso)?;
            let fit = path.selected_fit();
            (fit.coef.clone(), fit.kkt_residual, Some(fit.kappa))
        }
    };
    let pi = propensity_scores(input.f, &coef);
    Ok(PropensityFit {
        arm,
        coef,
        pi,
        residual,
        kappa,
    })
}

/// Fitted quantile and outcome-mean models with the resulting estimating
/// function values for one arm and side.
#[derive(Debug, Clone, PartialEq)]
pub struct SideFit {
    pub side: Side,
    pub beta: DVector<f64>,
    pub alpha: DVector<f64>,
    pub q: Vec<f64>,
    pub m: Vec<f64>,
    pub phi: Vec<f64>,
    pub quantile_residual: f64,
}

/// Weights `T (1-pi)/pi` for the treated arm and `(1-T) pi/(1-pi)` for the
/// control arm.
pub fn arm_weights(t: &[bool], pi: &[f64], arm: Arm) -> Vec<f64> {
    t.iter()
        .zip(pi)
        .map(|(ti, p)| {
            let p = p.clamp(PROPENSITY_CLIP, 1.0 - PROPENSITY_CLIP);
            match (arm, ti) {
                (Arm::Treated, true) => (1.0 - p) / p,
                (Arm::Control, false) => p / (1.0 - p),
                _ => 0.0,
            }
        })
        .collect()
}

pub fn fit_side(
    input: &EstimationInput,
    prop: &PropensityFit,
    side: Side,
    p: &PhiParams,
    config: &EstimationConfig,
) -> Result<SideFit> {
    input.validate()?;
    let w = arm_weights(input.t, &prop.pi, prop.arm);
    let level = p.level(side);
    let (beta, quantile_residual) = match config.method {
        Method::Cal => {
            let fit = fit_weighted_quantile(&input.h.matrix, input.y, &w, level)?;
            (fit.coef, fit.kkt_residual)
        }
        Method::Rcal => {
            let loss = LassoLoss::WeightedQuantile {
                y: input.y.to_vec(),
                w: w.clone(),
                tau: level,
            };
            let path = fit_lasso_path_cv(&loss, &input.h.matrix, &config.lasso)?;
            let fit = path.selected_fit();
            (fit.coef.clone(), fit.kkt_residual)
        }
    };
    let q = input.h.predict(&beta);
    let z: Vec<f64> = input
        .y
        .iter()
        .zip(&q)
        .map(|(y, qi)| transformed_response(side, *y, *qi, p))
        .collect();
    let alpha = match config.method {
        Method::Cal => fit_weighted_ls(input.f, &z, &w)?.coef,
        Method::Rcal => {
            let loss = LassoLoss::WeightedLs { z, w };
            let path = fit_lasso_path_cv(&loss, &input.f.matrix, &config.lasso)?;
            path.selected_fit().coef.clone()
        }
    };
    let m = input.f.predict(&alpha);
    let phi = (0..input.y.len())
        .map(|i| {
            let u = UnitValues {
                t: input.t[i],
                y: input.y[i],
                pi: prop.pi[i],
                q: q[i],
                m: m[i],
            };
            phi_eval(side, prop.arm, &u, p)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(SideFit {
        side,
        beta,
        alpha,
        q,
        m,
        phi,
        quantile_residual,
    })
}

/// Propensity fits of the treated and control pipelines. They do not depend
/// on the sensitivity parameters and can be reused across a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PropensityPair {
    pub treated: PropensityFit,
    pub control: PropensityFit,
}

impl PropensityPair {
    pub fn fit(input: &EstimationInput, config: &EstimationConfig) -> Result<Self> {
        Ok(Self {
            treated: fit_propensity(input, Arm::Treated, config)?,
            control: fit_propensity(input, Arm::Control, config)?,
        })
    }
}

/// All four side fits at one parameter setting.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmFits {
    pub mu1_upper: SideFit,
    pub mu1_lower: SideFit,
    pub mu0_upper: SideFit,
    pub mu0_lower: SideFit,
}

pub fn fit_all_sides(
    input: &EstimationInput,
    props: &PropensityPair,
    params: &SensitivityParams,
    config: &EstimationConfig,
) -> Result<ArmFits> {
    let p1 = PhiParams::for_arm(params, Arm::Treated)?;
    let p0 = PhiParams::for_arm(params, Arm::Control)?;
    Ok(ArmFits {
        mu1_upper: fit_side(input, &props.treated, Side::Upper, &p1, config)?,
        mu1_lower: fit_side(input, &props.treated, Side::Lower, &p1, config)?,
        mu0_upper: fit_side(input, &props.control, Side::Upper, &p0, config)?,
        mu0_lower: fit_side(input, &props.control, Side::Lower, &p0, config)?,
    })
}

/// Ratio bounds `mu1+/mu0-` and `mu1-/mu0+` with delta-method variances from
/// the linearization `{(phi1 - mu1) - r (phi0 - mu0)} / mu0`. `None` when a
/// denominator estimate is not positive.
pub fn crr_report(fits: &ArmFits, level: f64) -> Result<Option<EstimateReport>> {
    let ratio_phi = |num: &[f64], den: &[f64]| -> Result<Option<Vec<f64>>> {
        let a = BoundEstimate::from_phi(num)?.estimate;
        let b = BoundEstimate::from_phi(den)?.estimate;
        if b <= 0.0 {
            return Ok(None);
        }
        let r = a / b;
        Ok(Some(
            num.iter()
                .zip(den)
                .map(|(x, y)| r + ((x - a) - r * (y - b)) / b)
                .collect(),
        ))
    };
    let upper = ratio_phi(&fits.mu1_upper.phi, &fits.mu0_lower.phi)?;
    let lower = ratio_phi(&fits.mu1_lower.phi, &fits.mu0_upper.phi)?;
    match (lower, upper) {
        (Some(l), Some(u)) => Ok(Some(EstimateReport::from_phi(Estimand::Crr, l, u, level)?)),
        _ => Ok(None),
    }
}

/// Reports for `mu1`, `mu0`, the ATE and, when `with_ratio` is set, the
/// causal ratio `mu1 / mu0` (meaningful for nonnegative outcomes).
pub fn reports_from_fits(fits: &ArmFits, level: f64, with_ratio: bool) -> Result<Vec<EstimateReport>> {
    let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<f64>>();
    let mut out = vec![
        EstimateReport::from_phi(
            Estimand::Mu1,
            fits.mu1_lower.phi.clone(),
            fits.mu1_upper.phi.clone(),
            level,
        )?,
        EstimateReport::from_phi(
            Estimand::Mu0,
            fits.mu0_lower.phi.clone(),
            fits.mu0_upper.phi.clone(),
            level,
        )?,
        EstimateReport::from_phi(
            Estimand::Ate,
            diff(&fits.mu1_lower.phi, &fits.mu0_upper.phi),
            diff(&fits.mu1_upper.phi, &fits.mu0_lower.phi),
            level,
        )?,
    ];
    if with_ratio {
        if let Some(r) = crr_report(fits, level)? {
            out.push(r);
        }
    }
    Ok(out)
}

/// Full pipeline at one parameter setting.
pub fn estimate_bounds(
    input: &EstimationInput,
    params: &SensitivityParams,
    config: &EstimationConfig,
    with_ratio: bool,
) -> Result<Vec<EstimateReport>> {
    let props = PropensityPair::fit(input, config)?;
    let fits = fit_all_sides(input, &props, params, config)?;
    reports_from_fits(&fits, config.level, with_ratio)
}

/// Reports for one `(lambda, delta)` cell of a grid with symmetric odds
/// range `(1/lambda, lambda)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub lambda: f64,
    pub delta: f64,
    pub reports: Vec<EstimateReport>,
}

/// Runs the pipeline over a `lambda x delta` grid, reusing the propensity
/// fits across cells.
pub fn run_grid(
    input: &EstimationInput,
    lambdas: &[f64],
    deltas: &[f64],
    config: &EstimationConfig,
    with_ratio: bool,
) -> Result<Vec<GridCell>> {
    if lambdas.is_empty() || deltas.is_empty() {
        return Err(Error::InvalidParameter("grids must be nonempty".into()));
    }
    let props = PropensityPair::fit(input, config)?;
    let mut out = Vec::with_capacity(lambdas.len() * deltas.len());
    for &lambda in lambdas {
        for &delta in deltas {
            let params = SensitivityParams::symmetric(lambda, OutcomeSpec::Recommended { delta })?;
            let fits = fit_all_sides(input, &props, &params, config)?;
            out.push(GridCell {
                lambda,
                delta,
                reports: reports_from_fits(&fits, config.level, with_ratio)?,
            });
        }
    }
    Ok(out)
}
