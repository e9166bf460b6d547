//! Result tables written as `results.json` and `results.csv`.

use std::cmp::Ordering;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Serialize, Serializer};

/// A table cell: a finite number, an infinite value or a missing entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cell {
    Num(f64),
    Missing,
}

impl Cell {
    pub fn of(v: f64) -> Self {
        if v.is_nan() {
            Cell::Missing
        } else {
            Cell::Num(v)
        }
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            Cell::Num(v) => Some(*v),
            Cell::Missing => None,
        }
    }

    pub fn render(&self) -> String {
        match self {
            Cell::Num(v) if v.is_infinite() => {
                if *v > 0.0 {
                    "inf".into()
                } else {
                    "-inf".into()
                }
            }
            Cell::Num(v) => format!("{v}"),
            Cell::Missing => "NA".into(),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::of(v)
    }
}

impl Serialize for Cell {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Cell::Num(v) if v.is_finite() => s.serialize_f64(*v),
            _ => s.serialize_str(&self.render()),
        }
    }
}

/// One row per estimand and parameter setting.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub estimand: String,
    pub lambda: Cell,
    pub delta: Cell,
    pub theta: Cell,
    pub method: String,
    pub bound_lower: Cell,
    pub bound_upper: Cell,
    pub se_lower: Cell,
    pub se_upper: Cell,
    pub ci_lower: Cell,
    pub ci_upper: Cell,
    pub status: String,
}

impl ResultRow {
    /// Row with every numeric column missing.
    pub fn empty(estimand: &str, lambda: f64, delta: f64, theta: Cell, method: &str, status: String) -> Self {
        Self {
            estimand: estimand.into(),
            lambda: Cell::of(lambda),
            delta: Cell::of(delta),
            theta,
            method: method.into(),
            bound_lower: Cell::Missing,
            bound_upper: Cell::Missing,
            se_lower: Cell::Missing,
            se_upper: Cell::Missing,
            ci_lower: Cell::Missing,
            ci_upper: Cell::Missing,
            status,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

fn estimand_rank(e: &str) -> usize {
    ["mu1", "mu0", "ate", "crr"].iter().position(|x| *x == e).unwrap_or(4)
}

fn cmp_cell(a: &Cell, b: &Cell) -> Ordering {
    match (a.value(), b.value()) {
        (None, None) => Ordering::Equal,
        (None, Some(_)) => Ordering::Less,
        (Some(_), None) => Ordering::Greater,
        (Some(x), Some(y)) => x.total_cmp(&y),
    }
}

/// Orders rows by estimand, `lambda`, `delta`, `theta` and method.
pub fn sort_rows(rows: &mut [ResultRow]) {
    rows.sort_by(|a, b| {
        estimand_rank(&a.estimand)
            .cmp(&estimand_rank(&b.estimand))
            .then_with(|| a.estimand.cmp(&b.estimand))
            .then_with(|| cmp_cell(&a.lambda, &b.lambda))
            .then_with(|| cmp_cell(&a.delta, &b.delta))
            .then_with(|| cmp_cell(&a.theta, &b.theta))
            .then_with(|| a.method.cmp(&b.method))
    });
}

/// Contents of `results.json`.
#[derive(Debug, Clone, Serialize)]
pub struct Report<R: Serialize, E: Serialize> {
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
    /// False when at least one cell failed.
    pub complete: bool,
    pub notes: Vec<String>,
    pub rows: Vec<R>,
    /// Command-specific details.
    pub details: E,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn write_csv<R: Serialize>(path: &Path, rows: &[R]) -> Result<()> {
    let file = std::fs::File::create(path).with_context(|| format!("writing {}", path.display()))?;
    let mut w = csv::Writer::from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `results.json` and `results.csv` into `dir`.
pub fn write_report<R: Serialize, E: Serialize>(dir: &Path, report: &Report<R, E>) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write_json(&dir.join("results.json"), report)?;
    write_csv(&dir.join("results.csv"), &report.rows)?;
    println!("wrote {} rows to {}", report.rows.len(), dir.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cells_render() {
        assert_eq!(Cell::of(f64::INFINITY).render(), "inf");
        assert_eq!(Cell::of(f64::NAN).render(), "NA");
        assert_eq!(Cell::of(0.25).render(), "0.25");
        assert_eq!(serde_json::to_string(&Cell::of(f64::INFINITY)).unwrap(), "\"inf\"");
        assert_eq!(serde_json::to_string(&Cell::Missing).unwrap(), "\"NA\"");
        assert_eq!(serde_json::to_string(&Cell::of(1.5)).unwrap(), "1.5");
    }

    #[test]
    fn rows_sorted_with_missing_theta_first() {
        let row = |e: &str, l: f64, t: Cell| ResultRow::empty(e, l, 0.5, t, "DV", "ok".into());
        let mut rows = vec![
            row("ate", 1.0, Cell::Missing),
            row("mu1", 2.0, Cell::of(3.0)),
            row("mu1", 2.0, Cell::Missing),
            row("mu1", 1.5, Cell::of(1.0)),
        ];
        sort_rows(&mut rows);
        assert_eq!(rows[0].lambda, Cell::of(1.5));
        assert_eq!(rows[1].theta, Cell::Missing);
        assert_eq!(rows[2].theta, Cell::of(3.0));
        assert_eq!(rows[3].estimand, "ate");
    }
}
