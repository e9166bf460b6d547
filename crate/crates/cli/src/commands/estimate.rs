//! `estimate`: doubly robust sample bounds with CAL or RCAL fitting.

use anyhow::{bail, Context, Result};
use emsm_core::bounds::{OutcomeSpec, SensitivityParams};
use emsm_core::data::Dataset;
use emsm_core::estimate::{
    fit_all_sides, reports_from_fits, EstimateReport, EstimationConfig, EstimationInput, Method, PropensityPair,
};
use emsm_core::fit::{build_design, Design, Dropped};
use serde::Serialize;

use super::{error_status, finish, STATUS_OK};
use crate::config::{load, AnalysisConfig, AnalysisMethod};
use crate::output::{Cell, ResultRow};
use crate::CommonArgs;

#[derive(Debug, Serialize)]
pub struct DesignReport {
    pub columns: Vec<String>,
    pub dropped: Vec<Dropped>,
    pub rank_deficient: Vec<String>,
}

impl DesignReport {
    pub fn of(d: &Design) -> Self {
        Self {
            columns: d.column_names(),
            dropped: d.dropped.clone(),
            rank_deficient: d.rank_deficient.clone(),
        }
    }
}

#[derive(Debug, Serialize)]
struct Details {
    n: usize,
    n_treated: usize,
    level: f64,
    design: DesignReport,
    quantile_design: DesignReport,
}

/// Reads the CSV named by the configuration and checks the outcome kind.
pub fn read_data(cfg: &AnalysisConfig, path: &std::path::Path) -> Result<Dataset> {
    let data = Dataset::from_csv_path(path, &cfg.columns).with_context(|| format!("reading {}", path.display()))?;
    cfg.outcome_kind.check(&data.y)?;
    Ok(data)
}

fn report_row(r: &EstimateReport, lambda: f64, delta: f64, method: &str) -> ResultRow {
    ResultRow {
        estimand: r.estimand.as_str().into(),
        lambda: Cell::of(lambda),
        delta: Cell::of(delta),
        theta: Cell::Missing,
        method: method.into(),
        bound_lower: Cell::of(r.lower.estimate),
        bound_upper: Cell::of(r.upper.estimate),
        se_lower: Cell::of(r.lower.se),
        se_upper: Cell::of(r.upper.se),
        ci_lower: Cell::of(r.ci_two_sided.lower),
        ci_upper: Cell::of(r.ci_two_sided.upper),
        status: STATUS_OK.into(),
    }
}

pub fn run(args: &CommonArgs) -> Result<bool> {
    let loaded = load::<AnalysisConfig>(&args.config)?;
    let cfg = &loaded.value;
    cfg.validate()?;
    let (method, label) = match cfg.method {
        AnalysisMethod::Cal => (Method::Cal, "CAL"),
        AnalysisMethod::Rcal => (Method::Rcal, "RCAL"),
        AnalysisMethod::Dv => bail!("method DV is run by the dv subcommand"),
    };
    let seed = args.seed.unwrap_or(cfg.seed);
    let data = read_data(cfg, &loaded.resolve(&cfg.input))?;
    let f = build_design(&data.x, &data.names, &cfg.design)?;
    let h = build_design(&data.x, &data.names, cfg.quantile_design.as_ref().unwrap_or(&cfg.design))?;
    let input = EstimationInput {
        y: &data.y,
        t: &data.t,
        f: &f,
        h: &h,
    };
    let mut lasso = cfg.lasso.clone();
    lasso.seed = seed;
    let config = EstimationConfig {
        method,
        level: cfg.level,
        lasso,
    };
    let with_ratio = cfg.outcome_kind.with_ratio();
    let mut estimands = vec!["mu1", "mu0", "ate"];
    if with_ratio {
        estimands.push("crr");
    }
    let mut notes = vec![format!(
        "intervals are two-sided Wald intervals at level {} covering the bound interval",
        cfg.level
    )];
    let mut rows = Vec::new();
    match PropensityPair::fit(&input, &config) {
        Ok(props) => {
            for &lambda in &cfg.lambdas {
                for &delta in &cfg.deltas {
                    let cell = || -> emsm_core::Result<Vec<EstimateReport>> {
                        let params = SensitivityParams::symmetric(lambda, OutcomeSpec::Recommended { delta })?;
                        let fits = fit_all_sides(&input, &props, &params, &config)?;
                        reports_from_fits(&fits, cfg.level, with_ratio)
                    };
                    match cell() {
                        Ok(reports) => {
                            rows.extend(reports.iter().map(|r| report_row(r, lambda, delta, label)));
                            if with_ratio && reports.len() < estimands.len() {
                                rows.push(ResultRow::empty(
                                    "crr",
                                    lambda,
                                    delta,
                                    Cell::Missing,
                                    label,
                                    "undefined: nonpositive denominator".into(),
                                ));
                            }
                        }
                        Err(e) => {
                            for est in &estimands {
                                rows.push(ResultRow::empty(est, lambda, delta, Cell::Missing, label, error_status(&e)));
                            }
                        }
                    }
                }
            }
        }
        Err(e) => {
            notes.push(format!("propensity fit failed: {e}"));
            for &lambda in &cfg.lambdas {
                for &delta in &cfg.deltas {
                    for est in &estimands {
                        rows.push(ResultRow::empty(est, lambda, delta, Cell::Missing, label, error_status(&e)));
                    }
                }
            }
        }
    }
    let details = Details {
        n: data.n(),
        n_treated: data.n_treated(),
        level: cfg.level,
        design: DesignReport::of(&f),
        quantile_design: DesignReport::of(&h),
    };
    finish(args, "estimate", loaded.sha256.clone(), seed, notes, rows, details)
}
