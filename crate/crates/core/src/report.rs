//! Report writers: JSON, per-ħ CSV tables and standalone SVG log-log plots.
//! Every output carries the config hash.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::Serialize;

use crate::experiments::{ExperimentReport, RunStatus};

/// JSON document `{config_hash, report}`.
pub fn to_json<T: Serialize>(report: &T, config_hash: &str) -> serde_json::Result<String> {
    #[derive(Serialize)]
    struct Doc<'a, T> {
        config_hash: &'a str,
        report: &'a T,
    }
    let mut s = serde_json::to_string_pretty(&Doc { config_hash, report })?;
    s.push('\n');
    Ok(s)
}

fn value_keys(report: &ExperimentReport) -> Vec<String> {
    let keys: BTreeSet<&String> = report.rows.iter().flat_map(|r| r.values.keys()).collect();
    keys.into_iter().cloned().collect()
}

/// One row per ħ: `hbar,h,s_obs,status,<value keys…>`, empty cells for
/// missing values.
pub fn to_csv(report: &ExperimentReport, config_hash: &str) -> String {
    let keys = value_keys(report);
    let mut out = format!("# config_hash={config_hash}\nhbar,h,s_obs,status");
    for k in &keys {
        out.push(',');
        out.push_str(k);
    }
    out.push('\n');
    for r in &report.rows {
        let status = match r.status {
            RunStatus::Ok => "ok",
            RunStatus::Aborted(_) => "aborted",
        };
        let _ = write!(out, "{:e},{:e},{:e},{status}", r.hbar, r.h, r.s_obs);
        for k in &keys {
            out.push(',');
            if let Some(v) = r.get(k) {
                let _ = write!(out, "{v:e}");
            }
        }
        out.push('\n');
    }
    out
}

/// CSV of `(s, value)` pairs under a header.
pub fn series_csv(header: &str, rows: &[(f64, f64)], config_hash: &str) -> String {
    let mut out = format!("# config_hash={config_hash}\n{header}\n");
    for (s, v) in rows {
        let _ = writeln!(out, "{s:e},{v:e}");
    }
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Log-log plot of every fitted quantity against ħ with the fitted line
/// (solid) and the predicted slope through the data centroid (dashed). The
/// plotted data are embedded in a `<metadata>` block.
pub fn to_svg(report: &ExperimentReport, config_hash: &str) -> String {
    let (w, h, m) = (640.0, 420.0, 60.0);
    let series: Vec<(&str, Vec<(f64, f64)>, f64, f64, f64)> = report
        .fits
        .iter()
        .map(|f| {
            let pts: Vec<(f64, f64)> = report.series(&f.quantity).into_iter().map(|(a, b)| (a.ln(), b.ln())).collect();
            (f.quantity.as_str(), pts, f.slope, f.predicted, 0.0)
        })
        .collect();
    let all: Vec<(f64, f64)> = series.iter().flat_map(|s| s.1.iter().copied()).collect();
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">"
    );
    let _ = writeln!(svg, "<metadata>");
    let _ = writeln!(svg, "config_hash={config_hash}");
    for (name, pts, slope, pred, _) in &series {
        let _ = writeln!(svg, "series {} slope={slope:e} predicted={pred:e}", escape(name));
        for (x, y) in pts {
            let _ = writeln!(svg, "{:e},{:e}", x.exp(), y.exp());
        }
    }
    let _ = writeln!(svg, "</metadata>");
    let _ = writeln!(svg, "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>");
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">{} (log-log vs hbar)</text>",
        w / 2.0,
        escape(&report.experiment)
    );
    if all.is_empty() {
        svg.push_str("</svg>\n");
        return svg;
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for (x, y) in &all {
        x0 = x0.min(*x);
        x1 = x1.max(*x);
        y0 = y0.min(*y);
        y1 = y1.max(*y);
    }
    if x1 - x0 < 1e-12 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-12 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let px = |x: f64| m + (x - x0) / (x1 - x0) * (w - 2.0 * m);
    let py = |y: f64| h - m - (y - y0) / (y1 - y0) * (h - 2.0 * m);
    let _ = writeln!(
        svg,
        "<rect x=\"{m}\" y=\"{m}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>",
        w - 2.0 * m,
        h - 2.0 * m
    );
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">log hbar [{x0:.3}, {x1:.3}]</text>",
        w / 2.0,
        h - 20.0
    );
    let _ = writeln!(
        svg,
        "<text x=\"15\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 15 {})\">log value [{y0:.3}, {y1:.3}]</text>",
        h / 2.0,
        h / 2.0
    );
    for (i, (name, pts, slope, pred, _)) in series.iter().enumerate() {
        let c = COLORS[i % COLORS.len()];
        if pts.is_empty() {
            continue;
        }
        let n = pts.len() as f64;
        let cx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let cy = pts.iter().map(|p| p.1).sum::<f64>() / n;
        for (x, y) in pts {
            let _ = writeln!(svg, "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{c}\"/>", px(*x), py(*y));
        }
        for (s, dash) in [(*slope, ""), (*pred, " stroke-dasharray=\"6 4\"")] {
            let (ya, yb) = (cy + s * (x0 - cx), cy + s * (x1 - cx));
            let _ = writeln!(
                svg,
                "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"{c}\"{dash}/>",
                px(x0),
                py(ya.clamp(y0 - (y1 - y0), y1 + (y1 - y0))),
                px(x1),
                py(yb.clamp(y0 - (y1 - y0), y1 + (y1 - y0)))
            );
        }
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" fill=\"{c}\">{}: fit {slope:.3}, predicted {pred:.3}</text>",
            m + 8.0,
            m + 16.0 + 14.0 * i as f64,
            escape(name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// One `PASS|FAIL name: detail` line per verdict.
pub fn verdict_summary(report: &ExperimentReport) -> String {
    let mut out = String::new();
    for v in &report.verdicts {
        let _ = writeln!(out, "{} {}: {}", if v.pass { "PASS" } else { "FAIL" }, v.name, v.detail);
    }
    out
}
