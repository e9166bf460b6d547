//! `bounds`: closed-form population bounds from stratum-level laws.

use anyhow::{Context, Result};
use emsm_core::bounds::{
    aggregate_strata, emsm_conditional_bounds, ConditionalSummary, Interval, OutcomeSpec, SensitivityParams,
    StratumBounds,
};
use emsm_core::dv::RatioBound;
use serde::Serialize;

use super::{bound_row, error_status, finish};
use crate::config::{load, BoundsConfig};
use crate::output::{Cell, ResultRow};
use crate::CommonArgs;

#[derive(Debug, Serialize)]
struct Details {
    strata: usize,
    /// Whether every outcome law has nonnegative support, so that ratio
    /// bounds are reported.
    nonnegative: bool,
}

fn ratio_interval(mu1: Interval, mu0: Interval) -> Option<Interval> {
    let lo = RatioBound::of(mu1.lower, mu0.upper).value()?;
    let hi = RatioBound::of(mu1.upper, mu0.lower).value()?;
    Some(Interval::new(lo, hi))
}

pub fn run(args: &CommonArgs) -> Result<bool> {
    let loaded = load::<BoundsConfig>(&args.config)?;
    let cfg = &loaded.value;
    cfg.validate()?;
    let seed = args.seed.unwrap_or(cfg.seed);
    let mut dists = Vec::with_capacity(cfg.strata.len());
    for (i, s) in cfg.strata.iter().enumerate() {
        let t = s.treated.to_dist().with_context(|| format!("stratum {i}, treated law"))?;
        let c = s.control.to_dist().with_context(|| format!("stratum {i}, control law"))?;
        if !(s.propensity > 0.0 && s.propensity < 1.0) {
            anyhow::bail!("stratum {i}: propensity must lie in (0, 1)");
        }
        dists.push((t, c));
    }
    let nonnegative = dists
        .iter()
        .all(|(t, c)| t.support().iter().chain(c.support()).all(|v| *v >= 0.0));
    let mut rows = Vec::new();
    for &lambda in &cfg.lambdas {
        for &delta in &cfg.deltas {
            let cell = || -> emsm_core::Result<_> {
                let params = SensitivityParams::symmetric(lambda, OutcomeSpec::Recommended { delta })?;
                let mut strata = Vec::with_capacity(dists.len());
                for ((t, c), s) in dists.iter().zip(&cfg.strata) {
                    let summary = ConditionalSummary::from_dists(t, c, s.propensity, &params)?;
                    let b = emsm_conditional_bounds(&params, &summary)?;
                    strata.push(StratumBounds {
                        weight: s.weight,
                        propensity: s.propensity,
                        treated_mean: summary.treated.cond_mean,
                        control_mean: summary.control.cond_mean,
                        nu1: b.nu1,
                        nu0: b.nu0,
                    });
                }
                aggregate_strata(&strata)
            };
            let mut estimands = vec!["mu1", "mu0", "ate"];
            if nonnegative {
                estimands.push("crr");
            }
            match cell() {
                Ok(pop) => {
                    rows.push(bound_row("mu1", lambda, delta, Cell::Missing, "eMSM", pop.mu1));
                    rows.push(bound_row("mu0", lambda, delta, Cell::Missing, "eMSM", pop.mu0));
                    rows.push(bound_row("ate", lambda, delta, Cell::Missing, "eMSM", pop.ate));
                    if nonnegative {
                        rows.push(match ratio_interval(pop.mu1, pop.mu0) {
                            Some(b) => bound_row("crr", lambda, delta, Cell::Missing, "eMSM", b),
                            None => ResultRow::empty(
                                "crr",
                                lambda,
                                delta,
                                Cell::Missing,
                                "eMSM",
                                "undefined: zero over zero".into(),
                            ),
                        });
                    }
                }
                Err(e) => {
                    for est in estimands {
                        rows.push(ResultRow::empty(est, lambda, delta, Cell::Missing, "eMSM", error_status(&e)));
                    }
                }
            }
        }
    }
    let details = Details {
        strata: cfg.strata.len(),
        nonnegative,
    };
    finish(args, "bounds", loaded.sha256.clone(), seed, Vec::new(), rows, details)
}
