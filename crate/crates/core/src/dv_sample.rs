//! Sample estimation of Ding–VanderWeele bounds for binary outcomes.
//!
//! Outcome probabilities in each arm and the propensity score are fitted by
//! maximum-likelihood logistic regression. Unconditional bounds average the
//! conditional bounds over the sample, and confidence intervals come from a
//! nonparametric pairs bootstrap with percentile endpoints.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bounds::Interval;
use crate::dv::{bounding_factor, BinaryStratum, DvBounds, DvParams, RatioBound};
use crate::estimate::normal_quantile;
use crate::fit::{expit, fit_logistic_ml, Design, PROPENSITY_CLIP};
use crate::synthetic::{dv_stratum_bounds, DvKind};
use crate::{Error, Result};

/// Largest share of failed bootstrap replicates that is tolerated.
const MAX_FAILURE_SHARE: f64 = 0.05;

/// Per-unit predictions of the plug-in models, clipped to the open unit interval.
#[derive(Debug, Clone, PartialEq)]
pub struct DvPluginModels {
    pub p1: Vec<f64>,
    pub p0: Vec<f64>,
    pub pi: Vec<f64>,
}

fn clip(v: f64) -> f64 {
    v.clamp(PROPENSITY_CLIP, 1.0 - PROPENSITY_CLIP)
}

fn check_inputs(design: &Design, y: &[f64], t: &[bool]) -> Result<()> {
    let n = design.nrows();
    if y.len() != n || t.len() != n {
        return Err(Error::InvalidInput("outcome, treatment and design differ in length".into()));
    }
    if y.iter().any(|v| *v != 0.0 && *v != 1.0) {
        return Err(Error::InvalidInput("DV bounds require a binary outcome".into()));
    }
    Ok(())
}

/// Fits `p1(x)`, `p0(x)` and `pi(x)` by maximum likelihood.
pub fn fit_plugin(design: &Design, y: &[f64], t: &[bool]) -> Result<DvPluginModels> {
    check_inputs(design, y, t)?;
    let names = design.column_names();
    let predict_arm = |arm: bool| -> Result<Vec<f64>> {
        let rows: Vec<usize> = (0..y.len()).filter(|i| t[*i] == arm).collect();
        let x = design.matrix.select_rows(&rows);
        let ys: Vec<f64> = rows.iter().map(|i| y[*i]).collect();
        let fit = fit_logistic_ml(&x, &ys, &names)?;
        Ok(design.predict(&fit.coef).into_iter().map(|e| clip(expit(e))).collect())
    };
    let p1 = predict_arm(true)?;
    let p0 = predict_arm(false)?;
    let tf: Vec<f64> = t.iter().map(|v| if *v { 1.0 } else { 0.0 }).collect();
    let prop = fit_logistic_ml(&design.matrix, &tf, &names)?;
    let pi = design.predict(&prop.coef).into_iter().map(|e| clip(expit(e))).collect();
    Ok(DvPluginModels { p1, p0, pi })
}

/// Sample averages of the conditional bounds, e.g. the ATE upper bound
/// `mean[{p1 - p0 / B(lambda2, theta)} {pi + (1 - pi) B(lambda2, theta)}]`
/// for the original family. Ratio bounds are ratios of averaged means.
pub fn dv_unconditional_bounds(models: &DvPluginModels, params: &DvParams, kind: DvKind) -> Result<DvBounds> {
    let n = models.p1.len();
    if n == 0 || models.p0.len() != n || models.pi.len() != n {
        return Err(Error::InvalidInput("plug-in predictions must share a nonzero length".into()));
    }
    let mut mu1 = Interval::new(0.0, 0.0);
    let mut mu0 = Interval::new(0.0, 0.0);
    for i in 0..n {
        let b = dv_stratum_bounds(&BinaryStratum::new(models.p1[i], models.p0[i], models.pi[i])?, params, kind)?;
        mu1.lower += b.mu1.lower;
        mu1.upper += b.mu1.upper;
        mu0.lower += b.mu0.lower;
        mu0.upper += b.mu0.upper;
    }
    let nf = n as f64;
    Ok(DvBounds::from_means(
        Interval::new(mu1.lower / nf, mu1.upper / nf),
        Interval::new(mu0.lower / nf, mu0.upper / nf),
    ))
}

/// Conditional variances of the original ATE bounds in a single stratum,
/// given standard errors `s1`, `s0` of the outcome probabilities and `s` of
/// the propensity. Returns `(lower, upper)`.
pub fn dv_conditional_ate_variances(
    stratum: &BinaryStratum,
    ses: (f64, f64, f64),
    params: &DvParams,
) -> (f64, f64) {
    let (s1, s0, s) = ses;
    let (p1, p0, pi) = (stratum.p1, stratum.p0, stratum.prob_t1);
    let bl = bounding_factor(params.inv_lambda1(), params.theta);
    let bu = bounding_factor(params.lambda2, params.theta);
    let lower = (s1 * s1 + s0 * s0 * bl * bl) * (pi + (1.0 - pi) / bl).powi(2)
        + (p1 - p0 * bl).powi(2) * (1.0 - 1.0 / bl).powi(2) * s * s;
    let upper = (s1 * s1 * bu * bu + s0 * s0) * (1.0 - pi + pi / bu).powi(2)
        + (p1 * bu - p0).powi(2) * (1.0 - 1.0 / bu).powi(2) * s * s;
    (lower, upper)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub seed: u64,
    pub level: f64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            replicates: 1000,
            seed: 0,
            level: 0.9,
        }
    }
}

/// Point bounds on the full sample and the percentile sensitivity interval.
/// Standard errors are matched to the interval endpoints:
/// `(point.lower - ci.lower) / z` and `(ci.upper - point.upper) / z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapInterval {
    pub point: Interval,
    pub ci: Interval,
    pub se_lower: f64,
    pub se_upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DvBootstrapResult {
    pub point: DvBounds,
    pub mu1: BootstrapInterval,
    pub mu0: BootstrapInterval,
    pub ate: BootstrapInterval,
    /// Absent when a ratio is infinite or undefined on the sample or any replicate.
    pub crr: Option<BootstrapInterval>,
    pub replicates: usize,
    pub failed: usize,
}

/// Linear-interpolation percentile of sorted values.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    let m = sorted.len();
    if m == 1 {
        return sorted[0];
    }
    let h = (m - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(m - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Row indices of bootstrap replicate `r`, from a generator keyed by
/// `(seed, r)`.
pub fn resample_indices(n: usize, seed: u64, r: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(r);
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

fn ratio_pair(b: &DvBounds) -> Option<(f64, f64)> {
    match (b.crr_lower, b.crr_upper) {
        (RatioBound::Finite(l), RatioBound::Finite(u)) => Some((l, u)),
        _ => None,
    }
}

/// Pairs bootstrap of the unconditional bounds.
pub fn dv_bootstrap_ci(
    design: &Design,
    y: &[f64],
    t: &[bool],
    params: &DvParams,
    kind: DvKind,
    config: &BootstrapConfig,
) -> Result<DvBootstrapResult> {
    let mut out = dv_bootstrap_grid(design, y, t, std::slice::from_ref(params), kind, config)?;
    out.pop().expect("one parameter setting")
}

/// Pairs bootstrap over several parameter settings. The plug-in models are
/// fitted once per replicate and shared by every setting; each setting gets
/// its own result or error.
pub fn dv_bootstrap_grid(
    design: &Design,
    y: &[f64],
    t: &[bool],
    params: &[DvParams],
    kind: DvKind,
    config: &BootstrapConfig,
) -> Result<Vec<Result<DvBootstrapResult>>> {
    check_inputs(design, y, t)?;
    if config.replicates < 2 {
        return Err(Error::InvalidParameter("at least two bootstrap replicates are required".into()));
    }
    if !(config.level > 0.0 && config.level < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "level must lie in (0, 1), got {}",
            config.level
        )));
    }
    let full = fit_plugin(design, y, t)?;
    let n = y.len();
    let mut models: Vec<Option<DvPluginModels>> = Vec::with_capacity(config.replicates);
    for r in 0..config.replicates {
        let idx = resample_indices(n, config.seed, r as u64);
        let d = design.select_rows(&idx);
        let ys: Vec<f64> = idx.iter().map(|i| y[*i]).collect();
        let ts: Vec<bool> = idx.iter().map(|i| t[*i]).collect();
        models.push(fit_plugin(&d, &ys, &ts).ok());
    }
    Ok(params
        .iter()
        .map(|p| summarize_replicates(&full, &models, p, kind, config))
        .collect())
}

fn summarize_replicates(
    full: &DvPluginModels,
    models: &[Option<DvPluginModels>],
    params: &DvParams,
    kind: DvKind,
    config: &BootstrapConfig,
) -> Result<DvBootstrapResult> {
    let point = dv_unconditional_bounds(full, params, kind)?;
    let mut reps: Vec<DvBounds> = Vec::with_capacity(models.len());
    let mut failed = 0;
    for m in models {
        match m.as_ref().map(|m| dv_unconditional_bounds(m, params, kind)) {
            Some(Ok(b)) => reps.push(b),
            _ => failed += 1,
        }
    }
    if failed as f64 > MAX_FAILURE_SHARE * config.replicates as f64 || reps.len() < 2 {
        return Err(Error::Bootstrap {
            failed,
            total: config.replicates,
        });
    }
    let alpha = (1.0 - config.level) / 2.0;
    let z = normal_quantile(1.0 - alpha);
    let summarize = |pt: Interval, lows: Vec<f64>, ups: Vec<f64>| {
        let mut lows = lows;
        let mut ups = ups;
        lows.sort_by(f64::total_cmp);
        ups.sort_by(f64::total_cmp);
        let ci = Interval::new(percentile(&lows, alpha), percentile(&ups, 1.0 - alpha));
        BootstrapInterval {
            point: pt,
            ci,
            se_lower: (pt.lower - ci.lower) / z,
            se_upper: (ci.upper - pt.upper) / z,
        }
    };
    let pick = |f: &dyn Fn(&DvBounds) -> Interval| -> (Vec<f64>, Vec<f64>) {
        reps.iter().map(|b| (f(b).lower, f(b).upper)).unzip()
    };
    let (l, u) = pick(&|b| b.mu1);
    let mu1 = summarize(point.mu1, l, u);
    let (l, u) = pick(&|b| b.mu0);
    let mu0 = summarize(point.mu0, l, u);
    let (l, u) = pick(&|b| b.ate);
    let ate = summarize(point.ate, l, u);
    let crr = ratio_pair(&point).and_then(|(pl, pu)| {
        let pairs: Option<Vec<(f64, f64)>> = reps.iter().map(ratio_pair).collect();
        pairs.map(|p| {
            let (l, u): (Vec<f64>, Vec<f64>) = p.into_iter().unzip();
            summarize(Interval::new(pl, pu), l, u)
        })
    });
    Ok(DvBootstrapResult {
        point,
        mu1,
        mu0,
        ate,
        crr,
        replicates: config.replicates,
        failed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn intercept(n: usize) -> Design {
        Design::from_matrix(DMatrix::from_element(n, 1, 1.0), vec!["(intercept)".into()]).unwrap()
    }

    #[test]
    fn single_stratum_ate_example() {
        let m = DvPluginModels {
            p1: vec![0.7; 3],
            p0: vec![0.5; 3],
            pi: vec![0.5; 3],
        };
        let p = DvParams::new(4.0, 0.5, 2.0).unwrap();
        let b = dv_unconditional_bounds(&m, &p, DvKind::Original).unwrap();
        assert!((b.ate.upper - 0.50375).abs() < 1e-12);
        let one = DvParams::new(1.0, 0.5, 2.0).unwrap();
        let c = dv_unconditional_bounds(&m, &one, DvKind::Original).unwrap();
        assert!((c.ate.upper - 0.2).abs() < 1e-12 && (c.ate.lower - 0.2).abs() < 1e-12);
    }

    #[test]
    fn intercept_plugin_matches_arm_means() {
        let y = [1.0, 0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 0.0];
        let t = [true, true, true, true, false, false, false, true];
        let m = fit_plugin(&intercept(8), &y, &t).unwrap();
        assert!((m.p1[0] - 0.6).abs() < 1e-9);
        assert!((m.p0[0] - 1.0 / 3.0).abs() < 1e-9);
        assert!((m.pi[0] - 5.0 / 8.0).abs() < 1e-9);
    }

    #[test]
    fn percentile_interpolates() {
        let s = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(percentile(&s, 0.5), 3.0);
        assert!((percentile(&s, 0.1) - 1.4).abs() < 1e-12);
    }

    #[test]
    fn bootstrap_is_deterministic() {
        let n = 60;
        let y: Vec<f64> = (0..n).map(|i| ((i * 7) % 3 == 0) as u8 as f64).collect();
        let t: Vec<bool> = (0..n).map(|i| (i * 5) % 4 != 0).collect();
        let cfg = BootstrapConfig {
            replicates: 50,
            seed: 3,
            level: 0.9,
        };
        let p = DvParams::symmetric(2.0, 1.5).unwrap();
        let a = dv_bootstrap_ci(&intercept(n), &y, &t, &p, DvKind::Original, &cfg).unwrap();
        let b = dv_bootstrap_ci(&intercept(n), &y, &t, &p, DvKind::Original, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.ate.ci.lower <= a.ate.point.lower && a.ate.point.upper <= a.ate.ci.upper);
    }
}
