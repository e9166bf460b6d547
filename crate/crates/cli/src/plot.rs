//! Static SVG figures of bounds against `lambda` with interval whiskers.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};

use crate::output::ResultRow;

const WIDTH: f64 = 820.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 60.0;
const LEGEND: f64 = 200.0;
const COLORS: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];
const THETA_RULES: [&str; 3] = ["theta+/2", "theta+", "3theta+/2"];

struct Point {
    lambda: f64,
    lower: f64,
    upper: f64,
    ci: Option<(f64, f64)>,
}

fn fmt_num(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{:.3}", v)
    }
}

/// Series label of a row: `delta`, plus the position of `theta` within its
/// `(lambda, delta)` cell when the rows carry a `theta` grid.
fn series_label(rows: &[ResultRow], r: &ResultRow) -> String {
    let Some(theta) = r.theta.value() else {
        return format!("delta={}", r.delta.render());
    };
    let mut cell: Vec<f64> = rows
        .iter()
        .filter(|o| o.estimand == r.estimand && o.lambda == r.lambda && o.delta == r.delta && o.method == r.method)
        .filter_map(|o| o.theta.value())
        .collect();
    cell.sort_by(f64::total_cmp);
    cell.dedup();
    let pos = cell.iter().position(|v| *v == theta).unwrap_or(0);
    if cell.len() == THETA_RULES.len() {
        format!("delta={} theta={}", r.delta.render(), THETA_RULES[pos])
    } else {
        format!("delta={} theta={}", r.delta.render(), fmt_num(theta))
    }
}

/// Finite points of one estimand grouped into series.
fn collect(rows: &[ResultRow], estimand: &str) -> BTreeMap<String, Vec<Point>> {
    let mut out: BTreeMap<String, Vec<Point>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.estimand == estimand && r.is_ok()) {
        let (Some(lambda), Some(lower), Some(upper)) = (r.lambda.value(), r.bound_lower.value(), r.bound_upper.value())
        else {
            continue;
        };
        if !(lambda.is_finite() && lower.is_finite() && upper.is_finite()) {
            continue;
        }
        let ci = match (r.ci_lower.value(), r.ci_upper.value()) {
            (Some(a), Some(b)) if a.is_finite() && b.is_finite() => Some((a, b)),
            _ => None,
        };
        out.entry(series_label(rows, r)).or_default().push(Point {
            lambda,
            lower,
            upper,
            ci,
        });
    }
    for pts in out.values_mut() {
        pts.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
    }
    out
}

fn range(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    }
}

/// Renders one figure; `None` when the estimand has no finite rows.
pub fn render_svg(rows: &[ResultRow], estimand: &str) -> Option<String> {
    let series = collect(rows, estimand);
    if series.is_empty() {
        return None;
    }
    let all: Vec<&Point> = series.values().flatten().collect();
    let (x0, x1) = range(all.iter().map(|p| p.lambda));
    let (y0, y1) = range(all.iter().flat_map(|p| {
        let (a, b) = p.ci.unwrap_or((p.lower, p.upper));
        [p.lower, p.upper, a, b]
    }));
    let right = WIDTH - LEGEND;
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (right - 2.0 * MARGIN);
    let sy = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{estimand} bounds</text>"#,
        right / 2.0
    );
    let (bx, by) = (MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(
        s,
        r#"<path d="M{bx},{} L{bx},{by} L{},{by}" stroke="black" fill="none"/>"#,
        MARGIN,
        right - MARGIN
    );
    for i in 0..=4 {
        let xv = x0 + (x1 - x0) * i as f64 / 4.0;
        let yv = y0 + (y1 - y0) * i as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            sx(xv),
            by + 18.0,
            fmt_num(xv)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            bx - 6.0,
            sy(yv) + 4.0,
            fmt_num(yv)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">lambda</text>"#,
        right / 2.0,
        HEIGHT - 16.0
    );
    for (k, (label, pts)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        for upper in [false, true] {
            let path: Vec<String> = pts
                .iter()
                .map(|p| format!("{:.2},{:.2}", sx(p.lambda), sy(if upper { p.upper } else { p.lower })))
                .collect();
            let _ = writeln!(
                s,
                r#"<polyline points="{}" stroke="{color}" fill="none" stroke-width="2"/>"#,
                path.join(" ")
            );
        }
        for p in pts {
            if let Some((a, b)) = p.ci {
                let x = sx(p.lambda);
                let _ = writeln!(
                    s,
                    r#"<path d="M{x:.2},{:.2} L{x:.2},{:.2} M{:.2},{:.2} L{:.2},{:.2} M{:.2},{:.2} L{:.2},{:.2}" stroke="{color}" stroke-width="1"/>"#,
                    sy(a),
                    sy(b),
                    x - 4.0,
                    sy(a),
                    x + 4.0,
                    sy(a),
                    x - 4.0,
                    sy(b),
                    x + 4.0,
                    sy(b)
                );
            }
        }
        let ly = MARGIN + 16.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{:.1}" y="{:.1}" width="12" height="3" fill="{color}"/><text x="{:.1}" y="{:.1}">{label}</text>"#,
            right,
            ly,
            right + 18.0,
            ly + 5.0
        );
    }
    s.push_str("</svg>\n");
    Some(s)
}

/// Writes `fig_<estimand>.svg` for each estimand with finite rows and returns
/// the file names.
pub fn write_figures(dir: &Path, rows: &[ResultRow]) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for e in ["mu1", "mu0", "ate", "crr"] {
        if let Some(svg) = render_svg(rows, e) {
            let name = format!("fig_{e}.svg");
            std::fs::write(dir.join(&name), svg).with_context(|| format!("writing {name}"))?;
            names.push(name);
        }
    }
    Ok(names)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::output::Cell;

    fn row(lambda: f64, lo: f64, hi: f64) -> ResultRow {
        let mut r = ResultRow::empty("mu1", lambda, 0.5, Cell::Missing, "CAL", "ok".into());
        r.bound_lower = Cell::of(lo);
        r.bound_upper = Cell::of(hi);
        r.ci_lower = Cell::of(lo - 0.1);
        r.ci_upper = Cell::of(hi + 0.1);
        r
    }

    #[test]
    fn renders_series_and_whiskers() {
        let rows = vec![row(1.0, 0.4, 0.4), row(2.0, 0.3, 0.5)];
        let svg = render_svg(&rows, "mu1").unwrap();
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert_eq!(svg.matches("stroke-width=\"1\"").count(), 2);
        assert!(render_svg(&rows, "mu0").is_none());
    }
}
