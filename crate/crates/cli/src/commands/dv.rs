//! `dv`: Ding-VanderWeele bounds for binary outcomes with percentile
//! bootstrap intervals over a `theta` grid aligned with each `(lambda, delta)`.

use anyhow::{bail, Result};
use emsm_core::dv::{theta_alignment_grid, theta_plus_minus, DvParams};
use emsm_core::dv_sample::{dv_bootstrap_grid, BootstrapConfig, BootstrapInterval, DvBootstrapResult};
use emsm_core::fit::build_design;
use emsm_core::synthetic::DvKind;
use serde::Serialize;

use super::estimate::{read_data, DesignReport};
use super::{error_status, finish, STATUS_OK};
use crate::config::{load, AnalysisConfig, AnalysisMethod};
use crate::output::{Cell, ResultRow};
use crate::CommonArgs;

const ESTIMANDS: [&str; 4] = ["mu1", "mu0", "ate", "crr"];
const THETA_LABELS: [&str; 3] = ["theta_plus/2", "theta_plus", "3*theta_plus/2"];

#[derive(Debug, Serialize)]
struct Details {
    n: usize,
    n_treated: usize,
    level: f64,
    replicates: usize,
    kind: DvKind,
    design: DesignReport,
}

fn interval_row(
    estimand: &str,
    b: &BootstrapInterval,
    lambda: f64,
    delta: f64,
    theta: f64,
    method: &str,
) -> ResultRow {
    ResultRow {
        estimand: estimand.into(),
        lambda: Cell::of(lambda),
        delta: Cell::of(delta),
        theta: Cell::of(theta),
        method: method.into(),
        bound_lower: Cell::of(b.point.lower),
        bound_upper: Cell::of(b.point.upper),
        se_lower: Cell::of(b.se_lower),
        se_upper: Cell::of(b.se_upper),
        ci_lower: Cell::of(b.ci.lower),
        ci_upper: Cell::of(b.ci.upper),
        status: STATUS_OK.into(),
    }
}

fn result_rows(r: &DvBootstrapResult, lambda: f64, delta: f64, theta: f64, method: &str) -> Vec<ResultRow> {
    let mut rows = vec![
        interval_row("mu1", &r.mu1, lambda, delta, theta, method),
        interval_row("mu0", &r.mu0, lambda, delta, theta, method),
        interval_row("ate", &r.ate, lambda, delta, theta, method),
    ];
    rows.push(match &r.crr {
        Some(c) => interval_row("crr", c, lambda, delta, theta, method),
        None => ResultRow::empty(
            "crr",
            lambda,
            delta,
            Cell::of(theta),
            method,
            "undefined: unbounded ratio on the sample or a replicate".into(),
        ),
    });
    rows
}

struct Slot {
    lambda: f64,
    delta: f64,
    theta: f64,
    params: Option<DvParams>,
}

pub fn run(args: &CommonArgs) -> Result<bool> {
    let loaded = load::<AnalysisConfig>(&args.config)?;
    let cfg = &loaded.value;
    cfg.validate()?;
    if cfg.method != AnalysisMethod::Dv {
        bail!("the dv subcommand requires method DV");
    }
    let seed = args.seed.unwrap_or(cfg.seed);
    let data = read_data(cfg, &loaded.resolve(&cfg.input))?;
    let design = build_design(&data.x, &data.names, &cfg.design)?;
    let method = match cfg.dv_kind {
        DvKind::Original => "DV",
        DvKind::Sharp => "DV-sharp",
    };
    let mut rows = Vec::new();
    let mut slots = Vec::new();
    for &lambda in &cfg.lambdas {
        let tau = lambda / (1.0 + lambda);
        for &delta in &cfg.deltas {
            let (tp, _) = theta_plus_minus(delta, tau);
            let raw = [0.5 * tp, tp, 1.5 * tp];
            for (theta, aligned) in raw.into_iter().zip(theta_alignment_grid(delta, tau)) {
                match aligned {
                    Some(th) => slots.push(Slot {
                        lambda,
                        delta,
                        theta,
                        params: DvParams::symmetric(th, lambda).ok(),
                    }),
                    None => {
                        for est in ESTIMANDS {
                            rows.push(ResultRow::empty(
                                est,
                                lambda,
                                delta,
                                Cell::of(theta),
                                method,
                                "excluded: theta below 1".into(),
                            ));
                        }
                    }
                }
            }
        }
    }
    let params: Vec<DvParams> = slots.iter().filter_map(|s| s.params).collect();
    let config = BootstrapConfig {
        replicates: cfg.bootstrap_replicates,
        seed,
        level: cfg.level,
    };
    let mut notes = vec![
        format!(
            "theta grid per (lambda, delta): {}; values below 1 are excluded",
            THETA_LABELS.join(", ")
        ),
        format!(
            "intervals are percentile bootstrap intervals at level {} with {} replicates",
            cfg.level, cfg.bootstrap_replicates
        ),
    ];
    match dv_bootstrap_grid(&design, &data.y, &data.t, &params, cfg.dv_kind, &config) {
        Ok(results) => {
            let mut results = results.into_iter();
            for s in &slots {
                let outcome = match s.params {
                    Some(_) => results.next().expect("one result per parameter setting"),
                    None => Err(emsm_core::Error::InvalidParameter("invalid DV parameters".into())),
                };
                match outcome {
                    Ok(r) => rows.extend(result_rows(&r, s.lambda, s.delta, s.theta, method)),
                    Err(e) => {
                        for est in ESTIMANDS {
                            rows.push(ResultRow::empty(est, s.lambda, s.delta, Cell::of(s.theta), method, error_status(&e)));
                        }
                    }
                }
            }
        }
        Err(e) => {
            notes.push(format!("plug-in fit failed: {e}"));
            for s in &slots {
                for est in ESTIMANDS {
                    rows.push(ResultRow::empty(est, s.lambda, s.delta, Cell::of(s.theta), method, error_status(&e)));
                }
            }
        }
    }
    let details = Details {
        n: data.n(),
        n_treated: data.n_treated(),
        level: cfg.level,
        replicates: cfg.bootstrap_replicates,
        kind: cfg.dv_kind,
        design: DesignReport::of(&design),
    };
    finish(args, "dv", loaded.sha256.clone(), seed, notes, rows, details)
}
