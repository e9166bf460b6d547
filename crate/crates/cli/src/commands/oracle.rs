//! `oracle`: closed-form conditional bounds against brute-force search over
//! latent binary confounders on random discrete instances.

use anyhow::Result;
use emsm_core::bounds::{emsm_arm_bounds, ArmSummary, OutcomeSpec, SensitivityParams, WorstCaseConstruction};
use emsm_core::oracle::{enumerate_emsm_bound, evaluate_construction, random_discrete_dist, LatentConstruction, OracleProblem};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{load, OracleConfig};
use crate::output::{write_report, Report};
use crate::CommonArgs;

const FORMULA_TOL: f64 = 1e-8;
const CONSTRUCTION_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleRow {
    pub instance: usize,
    pub support_size: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub delta: f64,
    pub formula_lower: f64,
    pub formula_upper: f64,
    pub oracle_lower: f64,
    pub oracle_upper: f64,
    pub slack: f64,
    /// Largest constraint violation of the two worst-case constructions.
    pub construction_violation: f64,
    /// Largest gap between a construction's objective and the formula.
    pub construction_gap: f64,
    pub pass: bool,
}

#[derive(Debug, Serialize)]
struct Details {
    instances: usize,
    passed: usize,
    resolution: usize,
    max_gap_over_slack: f64,
}

fn latent(c: &WorstCaseConstruction) -> LatentConstruction {
    LatentConstruction {
        laws: c.laws.clone(),
        prob_u1: c.prob_u1,
        lambda: c.lambda,
    }
}

pub fn run(args: &CommonArgs) -> Result<bool> {
    let loaded = load::<OracleConfig>(&args.config)?;
    let cfg = &loaded.value;
    cfg.validate()?;
    let seed = args.seed.unwrap_or(cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(cfg.instances);
    let mut worst_ratio: f64 = 0.0;
    for instance in 0..cfg.instances {
        let dist = random_discrete_dist(&mut rng, cfg.max_support);
        let [a, b] = cfg.lambda1_range;
        let lambda1 = if a < b { rng.random_range(a..=b) } else { a };
        let lambda2 = if cfg.lambda2_max > 1.0 { rng.random_range(1.0..=cfg.lambda2_max) } else { 1.0 };
        let delta: f64 = rng.random();
        let spec = OutcomeSpec::Recommended { delta };
        let params = SensitivityParams::new(lambda1, lambda2, spec)?;
        let formula = emsm_arm_bounds(&params, &ArmSummary::from_dist(&dist, params.tau()));
        let support_size = dist.support().len();
        let problem = OracleProblem::from_spec(dist.clone(), lambda1, lambda2, spec);
        let res = enumerate_emsm_bound(&problem, cfg.resolution)?;
        let mut violation: f64 = 0.0;
        let mut construction_gap: f64 = 0.0;
        for (c, target) in [
            (WorstCaseConstruction::upper(&params, &dist), formula.upper),
            (WorstCaseConstruction::lower(&params, &dist), formula.lower),
        ] {
            let check = evaluate_construction(&problem, &latent(&c), CONSTRUCTION_TOL);
            if check.max_violation > violation {
                violation = check.max_violation;
            }
            construction_gap = construction_gap.max((check.objective - target).abs());
        }
        let gap = (formula.upper - res.upper).abs().max((formula.lower - res.lower).abs());
        if res.slack > 0.0 {
            worst_ratio = worst_ratio.max(gap / res.slack);
        }
        let pass = gap <= res.slack + FORMULA_TOL
            && violation <= CONSTRUCTION_TOL
            && construction_gap <= CONSTRUCTION_TOL;
        rows.push(OracleRow {
            instance,
            support_size,
            lambda1,
            lambda2,
            delta,
            formula_lower: formula.lower,
            formula_upper: formula.upper,
            oracle_lower: res.lower,
            oracle_upper: res.upper,
            slack: res.slack,
            construction_violation: violation,
            construction_gap,
            pass,
        });
    }
    let passed = rows.iter().filter(|r| r.pass).count();
    let report = Report {
        command: "oracle".into(),
        config_sha256: loaded.sha256.clone(),
        seed,
        complete: passed == rows.len(),
        notes: vec![format!("{passed} of {} instances agree within the grid slack", rows.len())],
        rows,
        details: Details {
            instances: cfg.instances,
            passed,
            resolution: cfg.resolution,
            max_gap_over_slack: worst_ratio,
        },
    };
    write_report(&args.out_dir, &report)?;
    Ok(report.complete)
}
