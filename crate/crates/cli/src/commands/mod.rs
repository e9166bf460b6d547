//! Subcommand implementations.

pub mod bounds;
pub mod dv;
pub mod estimate;
pub mod oracle;
pub mod simulate;

use anyhow::Result;
use emsm_core::bounds::Interval;
use serde::Serialize;

use crate::output::{sort_rows, write_report, Cell, Report, ResultRow};
use crate::plot::write_figures;
use crate::CommonArgs;

pub const STATUS_OK: &str = "ok";

/// Row with point bounds and no uncertainty columns.
pub fn bound_row(estimand: &str, lambda: f64, delta: f64, theta: Cell, method: &str, b: Interval) -> ResultRow {
    let mut r = ResultRow::empty(estimand, lambda, delta, theta, method, STATUS_OK.into());
    r.bound_lower = Cell::of(b.lower);
    r.bound_upper = Cell::of(b.upper);
    r
}

pub fn error_status(e: impl std::fmt::Display) -> String {
    format!("error: {e}")
}

/// Sorts the rows, writes the tables and figures and reports whether every
/// cell succeeded.
pub fn finish<E: Serialize>(
    args: &CommonArgs,
    command: &str,
    config_sha256: String,
    seed: u64,
    mut notes: Vec<String>,
    mut rows: Vec<ResultRow>,
    details: E,
) -> Result<bool> {
    sort_rows(&mut rows);
    let failed = rows.iter().filter(|r| r.status.starts_with("error")).count();
    if failed > 0 {
        notes.push(format!("{failed} rows failed"));
    }
    let report = Report {
        command: command.into(),
        config_sha256,
        seed,
        complete: failed == 0,
        notes,
        rows,
        details,
    };
    write_report(&args.out_dir, &report)?;
    if args.plots {
        for name in write_figures(&args.out_dir, &report.rows)? {
            println!("wrote {}", args.out_dir.join(name).display());
        }
    }
    Ok(report.complete)
}
