//! `simulate`: synthetic observational data with a sidecar of exact bounds.

use anyhow::Result;
use emsm_core::synthetic::{check_constraints, generate_synthetic, population_truth, ConstraintCheck, Truth};
use serde::Serialize;

use crate::config::{load, SimulateConfig};
use crate::output::write_json;
use crate::CommonArgs;

pub const OUTCOME: &str = "y";
pub const TREATMENT: &str = "t";

#[derive(Debug, Serialize)]
struct Sidecar<'a> {
    command: &'static str,
    config_sha256: &'a str,
    seed: u64,
    n: usize,
    truth: Truth,
    constraint_check: ConstraintCheck,
}

pub fn run(args: &CommonArgs) -> Result<bool> {
    let loaded = load::<SimulateConfig>(&args.config)?;
    let cfg = &loaded.value;
    cfg.dgp.validate()?;
    let seed = args.seed.unwrap_or(cfg.seed);
    let truth = population_truth(&cfg.dgp)?;
    let draw = generate_synthetic(&cfg.dgp, seed)?;
    let constraint_check = check_constraints(&cfg.dgp, &draw)?;
    std::fs::create_dir_all(&args.out_dir)?;
    let data_path = args.out_dir.join("data.csv");
    draw.data.write_csv(std::fs::File::create(&data_path)?, OUTCOME, TREATMENT)?;
    let sidecar = Sidecar {
        command: "simulate",
        config_sha256: &loaded.sha256,
        seed,
        n: draw.data.n(),
        truth,
        constraint_check,
    };
    write_json(&args.out_dir.join("truth.json"), &sidecar)?;
    println!("wrote {} and truth.json to {}", data_path.display(), args.out_dir.display());
    Ok(true)
}
