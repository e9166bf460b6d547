//! Synthetic data with a latent binary confounder and known population bounds.
//!
//! Covariates are independent binary variables, so the population splits into
//! finitely many strata whose observed outcome laws are known exactly. Within
//! each stratum the latent confounder follows the worst-case construction for
//! the upper bound on `E(Y(1) | x)`, so the full data satisfy the declared
//! sensitivity model and the true `E(Y(1))` equals the sharp upper bound.
//! The untreated potential outcome is independent of the confounder.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bounds::{
    aggregate_strata, emsm_arm_bounds, psi_factors, ArmSummary, DiscreteDist, Interval, OutcomeSpec,
    PopulationBounds, SensitivityParams, StratumBounds, WorstCaseConstruction,
};
use crate::data::Dataset;
use crate::dv::{dv_original_bounds, dv_sharp_bounds, BinaryStratum, DvBounds, DvParams};
use crate::fit::expit;
use crate::{Error, Result};

/// Pairwise product term `coef * x[a] * x[b]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pairwise {
    pub a: usize,
    pub b: usize,
    pub coef: f64,
}

/// `intercept + sum_j main[j] x[j] + sum pairwise terms`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearIndex {
    pub intercept: f64,
    pub main: Vec<f64>,
    #[serde(default)]
    pub pairwise: Vec<Pairwise>,
}

impl LinearIndex {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.intercept
            + self.main.iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
            + self.pairwise.iter().map(|p| p.coef * x[p.a] * x[p.b]).sum::<f64>()
    }

    fn validate(&self, k: usize) -> Result<()> {
        if self.main.len() != k || self.pairwise.iter().any(|p| p.a >= k || p.b >= k) {
            return Err(Error::InvalidParameter(format!(
                "linear index does not match {k} covariates"
            )));
        }
        Ok(())
    }
}

/// Law of the observed outcome given `(T, X)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutcomeModel {
    /// `Y = index_t(x) + scale * e` with `e` drawn from a fixed discrete law.
    Shifted {
        treated: LinearIndex,
        control: LinearIndex,
        noise_support: Vec<f64>,
        noise_probs: Vec<f64>,
        scale: f64,
    },
    /// `Y ~ Bernoulli(expit(index_t(x)))`.
    Binary { treated: LinearIndex, control: LinearIndex },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDgp {
    pub n: usize,
    /// `P(X_j = 1)` for each binary covariate.
    pub covariate_probs: Vec<f64>,
    /// Logit of the true propensity score.
    pub propensity: LinearIndex,
    pub outcome: OutcomeModel,
    /// Sensitivity parameters realized by the latent confounder; the outcome
    /// restriction uses the recommended specification with this `delta`.
    pub lambda1: f64,
    pub lambda2: f64,
    pub delta: f64,
}

/// One covariate pattern with its exact observed laws.
#[derive(Debug, Clone, PartialEq)]
pub struct Stratum {
    pub x: Vec<f64>,
    pub weight: f64,
    pub propensity: f64,
    pub treated: DiscreteDist,
    pub control: DiscreteDist,
}

impl SyntheticDgp {
    pub fn k(&self) -> usize {
        self.covariate_probs.len()
    }

    pub fn params(&self) -> Result<SensitivityParams> {
        SensitivityParams::new(self.lambda1, self.lambda2, OutcomeSpec::Recommended { delta: self.delta })
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.k();
        if k == 0 || k > 16 {
            return Err(Error::InvalidParameter("between 1 and 16 covariates are supported".into()));
        }
        if self.covariate_probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidParameter("covariate probabilities must lie in [0, 1]".into()));
        }
        self.propensity.validate(k)?;
        match &self.outcome {
            OutcomeModel::Shifted {
                treated,
                control,
                noise_support,
                noise_probs,
                scale,
            } => {
                treated.validate(k)?;
                control.validate(k)?;
                DiscreteDist::new(noise_support.clone(), noise_probs.clone())?;
                if !(scale.is_finite() && *scale > 0.0) {
                    return Err(Error::InvalidParameter("noise scale must be positive".into()));
                }
            }
            OutcomeModel::Binary { treated, control } => {
                treated.validate(k)?;
                control.validate(k)?;
            }
        }
        self.params()?.control_arm()?;
        Ok(())
    }

    fn outcome_law(&self, x: &[f64], treated: bool) -> Result<DiscreteDist> {
        match &self.outcome {
            OutcomeModel::Shifted {
                treated: ti,
                control: ci,
                noise_support,
                noise_probs,
                scale,
            } => {
                let a = if treated { ti.eval(x) } else { ci.eval(x) };
                DiscreteDist::new(
                    noise_support.iter().map(|e| a + scale * e).collect(),
                    noise_probs.clone(),
                )
            }
            OutcomeModel::Binary { treated: ti, control: ci } => {
                let p = expit(if treated { ti.eval(x) } else { ci.eval(x) });
                DiscreteDist::bernoulli(p)
            }
        }
    }

    /// All `2^k` covariate patterns, in binary counting order with `x[0]` as
    /// the lowest bit.
    pub fn strata(&self) -> Result<Vec<Stratum>> {
        self.validate()?;
        let k = self.k();
        (0..(1usize << k))
            .map(|code| {
                let x: Vec<f64> = (0..k).map(|j| ((code >> j) & 1) as f64).collect();
                let weight = x
                    .iter()
                    .zip(&self.covariate_probs)
                    .map(|(v, p)| if *v == 1.0 { *p } else { 1.0 - p })
                    .product();
                Ok(Stratum {
                    propensity: expit(self.propensity.eval(&x)),
                    treated: self.outcome_law(&x, true)?,
                    control: self.outcome_law(&x, false)?,
                    x,
                    weight,
                })
            })
            .collect()
    }
}

/// Exact per-stratum quantities recorded in the sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumTruth {
    pub x: Vec<f64>,
    pub weight: f64,
    pub propensity: f64,
    pub treated_mean: f64,
    pub control_mean: f64,
    pub nu1: Interval,
    pub nu0: Interval,
    pub psi_upper: f64,
    pub psi_lower: f64,
    /// Latent construction used to generate `Y(1)` among untreated units.
    pub construction: WorstCaseConstruction,
}

/// Sidecar truth for one DGP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub lambda1: f64,
    pub lambda2: f64,
    pub delta: f64,
    pub bounds: PopulationBounds,
    /// `E(Y(1))` and `E(Y(0))` of the full-data law.
    pub mu1: f64,
    pub mu0: f64,
    pub strata: Vec<StratumTruth>,
}

pub fn population_truth(dgp: &SyntheticDgp) -> Result<Truth> {
    let params = dgp.params()?;
    let ctrl = params.control_arm()?;
    let strata = dgp.strata()?;
    let mut sb = Vec::with_capacity(strata.len());
    let mut st = Vec::with_capacity(strata.len());
    for s in &strata {
        let a1 = ArmSummary::from_dist(&s.treated, params.tau());
        let a0 = ArmSummary::from_dist(&s.control, ctrl.tau());
        let nu1 = emsm_arm_bounds(&params, &a1);
        let nu0 = emsm_arm_bounds(&ctrl, &a0);
        let (psi_upper, psi_lower) = psi_factors(&params, &a1);
        let b = StratumBounds {
            weight: s.weight,
            propensity: s.propensity,
            treated_mean: a1.cond_mean,
            control_mean: a0.cond_mean,
            nu1,
            nu0,
        };
        sb.push(b);
        st.push(StratumTruth {
            x: s.x.clone(),
            weight: s.weight,
            propensity: s.propensity,
            treated_mean: a1.cond_mean,
            control_mean: a0.cond_mean,
            nu1,
            nu0,
            psi_upper,
            psi_lower,
            construction: WorstCaseConstruction::upper(&params, &s.treated),
        });
    }
    let bounds = aggregate_strata(&sb)?;
    let mu1 = st
        .iter()
        .map(|s| s.weight * (s.propensity * s.treated_mean + (1.0 - s.propensity) * s.construction.attained_value()))
        .sum();
    let mu0 = st.iter().map(|s| s.weight * s.control_mean).sum();
    Ok(Truth {
        lambda1: dgp.lambda1,
        lambda2: dgp.lambda2,
        delta: dgp.delta,
        bounds,
        mu1,
        mu0,
        strata: st,
    })
}

/// Which Ding–VanderWeele family to aggregate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DvKind {
    /// Bounding-factor bounds.
    Original,
    /// Sharp bounds under the same constraints.
    Sharp,
}

/// Conditional bounds for one binary stratum.
pub fn dv_stratum_bounds(s: &BinaryStratum, params: &DvParams, kind: DvKind) -> Result<DvBounds> {
    match kind {
        DvKind::Original => dv_original_bounds(s, params),
        DvKind::Sharp => Ok(dv_sharp_bounds(s, params).bounds),
    }
}

/// Population DV bounds on `mu1`, `mu0` and the ATE through iterated
/// expectations over the strata of a binary-outcome DGP.
pub fn dv_population_bounds(dgp: &SyntheticDgp, params: &DvParams, kind: DvKind) -> Result<PopulationBounds> {
    if !matches!(dgp.outcome, OutcomeModel::Binary { .. }) {
        return Err(Error::InvalidParameter("DV bounds require a binary outcome".into()));
    }
    let mut mu1 = Interval::new(0.0, 0.0);
    let mut mu0 = Interval::new(0.0, 0.0);
    for s in dgp.strata()? {
        let b = dv_stratum_bounds(&BinaryStratum::new(s.treated.mean(), s.control.mean(), s.propensity)?, params, kind)?;
        mu1.lower += s.weight * b.mu1.lower;
        mu1.upper += s.weight * b.mu1.upper;
        mu0.lower += s.weight * b.mu0.lower;
        mu0.upper += s.weight * b.mu0.upper;
    }
    Ok(PopulationBounds {
        mu1,
        mu0,
        ate: Interval::new(mu1.lower - mu0.upper, mu1.upper - mu0.lower),
    })
}

/// Unobserved parts of the generated full data.
#[derive(Debug, Clone, PartialEq)]
pub struct FullData {
    pub u: Vec<bool>,
    pub y1: Vec<f64>,
    pub y0: Vec<f64>,
    pub stratum: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDraw {
    pub data: Dataset,
    pub full: FullData,
}

fn draw_discrete<R: Rng + ?Sized>(rng: &mut R, support: &[f64], probs: &[f64]) -> f64 {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (y, p) in support.iter().zip(probs) {
        acc += p;
        if u < acc {
            return *y;
        }
    }
    *support.last().expect("nonempty support")
}

/// Draws `dgp.n` units of full data; the observed part is `(Y, T, X)` with
/// covariates named `x1, ..., xk`.
pub fn generate_synthetic(dgp: &SyntheticDgp, seed: u64) -> Result<SyntheticDraw> {
    let params = dgp.params()?;
    let strata = dgp.strata()?;
    let constructions: Vec<WorstCaseConstruction> = strata
        .iter()
        .map(|s| WorstCaseConstruction::upper(&params, &s.treated))
        .collect();
    let k = dgp.k();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = dgp.n;
    let mut xs = Vec::with_capacity(n * k);
    let mut full = FullData {
        u: Vec::with_capacity(n),
        y1: Vec::with_capacity(n),
        y0: Vec::with_capacity(n),
        stratum: Vec::with_capacity(n),
    };
    let mut y = Vec::with_capacity(n);
    let mut t = Vec::with_capacity(n);
    for _ in 0..n {
        let mut code = 0usize;
        for (j, p) in dgp.covariate_probs.iter().enumerate() {
            let bit = rng.random::<f64>() < *p;
            xs.push(if bit { 1.0 } else { 0.0 });
            code |= (bit as usize) << j;
        }
        let s = &strata[code];
        let c = &constructions[code];
        let treated = rng.random::<f64>() < s.propensity;
        let p_u1 = if treated { c.prob_u1 } else { c.lambda[1] * c.prob_u1 };
        let u = rng.random::<f64>() < p_u1;
        let y1 = draw_discrete(&mut rng, &c.support, &c.laws[u as usize]);
        let y0 = draw_discrete(&mut rng, s.control.support(), s.control.probs());
        full.u.push(u);
        full.y1.push(y1);
        full.y0.push(y0);
        full.stratum.push(code);
        t.push(treated);
        y.push(if treated { y1 } else { y0 });
    }
    let names = (1..=k).map(|j| format!("x{j}")).collect();
    let data = Dataset::new(y, t, DMatrix::from_row_slice(n, k, &xs), names)?;
    Ok(SyntheticDraw { data, full })
}

/// Empirical check of the treatment-odds constraint on a draw: within each
/// stratum, `P(U=u | T=0, x) / P(U=u | T=1, x)` is compared with the declared
/// ratio of the construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintCheck {
    /// Largest absolute z-score of the empirical `P(U=1 | T=0, x)` against its
    /// declared value, over strata with units in both arms.
    pub max_abs_z: f64,
    /// Largest amount by which an empirical ratio leaves `[lambda1, lambda2]`.
    pub max_ratio_excess: f64,
    pub strata_checked: usize,
}

pub fn check_constraints(dgp: &SyntheticDgp, draw: &SyntheticDraw) -> Result<ConstraintCheck> {
    let params = dgp.params()?;
    let strata = dgp.strata()?;
    let m = strata.len();
    let mut counts = vec![[[0usize; 2]; 2]; m];
    for i in 0..draw.data.n() {
        counts[draw.full.stratum[i]][draw.data.t[i] as usize][draw.full.u[i] as usize] += 1;
    }
    let mut max_abs_z = 0.0_f64;
    let mut max_ratio_excess = 0.0_f64;
    let mut checked = 0;
    for (code, s) in strata.iter().enumerate() {
        let c = WorstCaseConstruction::upper(&params, &s.treated);
        let n0 = (counts[code][0][0] + counts[code][0][1]) as f64;
        let n1 = (counts[code][1][0] + counts[code][1][1]) as f64;
        if n0 == 0.0 || n1 == 0.0 {
            continue;
        }
        checked += 1;
        let p0 = counts[code][0][1] as f64 / n0;
        let p1 = counts[code][1][1] as f64 / n1;
        let declared = c.lambda[1] * c.prob_u1;
        let sd = (declared * (1.0 - declared) / n0).sqrt();
        if sd > 0.0 {
            max_abs_z = max_abs_z.max((p0 - declared).abs() / sd);
        } else if p0 != declared {
            max_abs_z = f64::INFINITY;
        }
        for (a, b) in [(p0, p1), (1.0 - p0, 1.0 - p1)] {
            if b > 0.0 {
                let r = a / b;
                max_ratio_excess = max_ratio_excess
                    .max(r - params.lambda2)
                    .max(params.lambda1 - r);
            }
        }
    }
    Ok(ConstraintCheck {
        max_abs_z,
        max_ratio_excess,
        strata_checked: checked,
    })
}
