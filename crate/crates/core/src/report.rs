//! CSV and SVG artifacts for experiment records.
//!
//! CSV: header `experiment,key,metric,value,runtime_ms,seed`, LF line
//! endings, one row per (record, metric). Floats use Rust's shortest
//! round-trip formatting. `runtime_ms` is left empty unless requested.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::experiments::{sort_records, ExperimentRecord};

pub const CSV_HEADER: &str = "experiment,key,metric,value,runtime_ms,seed";

fn number(v: f64) -> String {
    format!("{v:?}")
}

pub fn render_csv(records: &[ExperimentRecord], seed: u64, include_runtime: bool) -> String {
    let mut sorted = records.to_vec();
    sort_records(&mut sorted);
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let seed = seed.to_string();
    // Writes into a Vec cannot fail.
    w.write_record(CSV_HEADER.split(',')).expect("in-memory write");
    for rec in &sorted {
        let runtime = if include_runtime { number(rec.runtime_ms) } else { String::new() };
        let key = number(rec.key);
        for (metric, value) in &rec.metrics {
            w.write_record([&rec.experiment, &key, metric, &number(*value), &runtime, &seed]).expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is UTF-8")
}

pub fn write_csv(path: &Path, records: &[ExperimentRecord], seed: u64, include_runtime: bool) -> Result<()> {
    fs::write(path, render_csv(records, seed, include_runtime))?;
    Ok(())
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_LEFT: f64 = 80.0;
const MARGIN_RIGHT: f64 = 180.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 60.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// One line per experiment label; `None` when no finite points exist.
pub fn render_svg(metric: &str, records: &[ExperimentRecord]) -> Option<String> {
    let mut series: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    for rec in records {
        if let Some(v) = rec.metric(metric) {
            if v.is_finite() && rec.key.is_finite() {
                series.entry(rec.experiment.as_str()).or_default().push((rec.key, v));
            }
        }
    }
    if series.is_empty() {
        return None;
    }
    for pts in series.values_mut() {
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    let all = || series.values().flatten();
    let (xmin, xmax) = all().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.0), hi.max(p.0)));
    let (ymin, ymax) = all().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.1), hi.max(p.1)));
    let log_x = xmin > 0.0 && xmax / xmin >= 20.0;
    let fx = |x: f64| if log_x { x.log10() } else { x };
    let (x0, x1) = pad(fx(xmin), fx(xmax));
    let (y0, y1) = pad(ymin, ymax);
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let px = |x: f64| MARGIN_LEFT + (fx(x) - x0) / (x1 - x0) * plot_w;
    let py = |y: f64| MARGIN_TOP + (1.0 - (y - y0) / (y1 - y0)) * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        escape(metric)
    );
    let _ = writeln!(
        svg,
        r##"<rect x="{MARGIN_LEFT}" y="{MARGIN_TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="#444"/>"##
    );

    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let xv = x0 + t * (x1 - x0);
        let label = if log_x { format!("{:.3e}", 10f64.powf(xv)) } else { format!("{xv:.3e}") };
        let sx = MARGIN_LEFT + t * plot_w;
        let _ = writeln!(
            svg,
            r##"<line x1="{sx:.2}" y1="{}" x2="{sx:.2}" y2="{}" stroke="#444"/><text x="{sx:.2}" y="{}" text-anchor="middle">{label}</text>"##,
            MARGIN_TOP + plot_h,
            MARGIN_TOP + plot_h + 5.0,
            MARGIN_TOP + plot_h + 20.0
        );
        let yv = y0 + t * (y1 - y0);
        let sy = MARGIN_TOP + (1.0 - t) * plot_h;
        let _ = writeln!(
            svg,
            r##"<line x1="{}" y1="{sy:.2}" x2="{MARGIN_LEFT}" y2="{sy:.2}" stroke="#444"/><text x="{}" y="{:.2}" text-anchor="end">{yv:.3e}</text>"##,
            MARGIN_LEFT - 5.0,
            MARGIN_LEFT - 8.0,
            sy + 4.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">key{}</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - 15.0,
        if log_x { " (log scale)" } else { "" }
    );

    for (i, (label, pts)) in series.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = pts.iter().map(|(x, y)| format!("{:.2},{:.2}", px(*x), py(*y))).collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{}"/>"#,
            path.join(" ")
        );
        for (x, y) in pts {
            let _ = writeln!(svg, r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{colour}"/>"#, px(*x), py(*y));
        }
        let ly = MARGIN_TOP + 10.0 + 18.0 * i as f64;
        let lx = WIDTH - MARGIN_RIGHT + 12.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{colour}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            lx + 18.0,
            lx + 24.0,
            ly + 4.0,
            escape(label)
        );
    }
    svg.push_str("</svg>\n");
    Some(svg)
}

fn pad(lo: f64, hi: f64) -> (f64, f64) {
    if hi > lo {
        let m = 0.05 * (hi - lo);
        (lo - m, hi + m)
    } else {
        let m = if lo == 0.0 { 1.0 } else { 0.05 * lo.abs() };
        (lo - m, hi + m)
    }
}

/// Writes `<stem>_<metric>.svg` for every metric present; returns the paths.
pub fn write_svgs(dir: &Path, stem: &str, records: &[ExperimentRecord]) -> Result<Vec<PathBuf>> {
    let metrics: std::collections::BTreeSet<&str> =
        records.iter().flat_map(|r| r.metrics.keys().map(String::as_str)).collect();
    let mut written = Vec::new();
    for metric in metrics {
        if let Some(svg) = render_svg(metric, records) {
            let path = dir.join(format!("{stem}_{metric}.svg"));
            fs::write(&path, svg)?;
            written.push(path);
        }
    }
    Ok(written)
}
