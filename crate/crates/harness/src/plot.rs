//! SVG bar and line plots of a report. Every drawn value is also stored
//! verbatim in a `data-value` attribute so plots can be checked against the
//! report they came from.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::report::{schedulers, Report};

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 160.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 8] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

/// A value recovered from a plot: series, key and number.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotValue {
    pub series: String,
    pub key: String,
    pub value: f64,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

struct Axis {
    lo: f64,
    hi: f64,
}

impl Axis {
    fn new(values: impl Iterator<Item = f64>) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.filter(|v| v.is_finite()) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            return Self { lo: 0.0, hi: 1.0 };
        }
        let pad = ((hi - lo) * 0.1).max(0.5);
        Self { lo: (lo - pad).floor(), hi: (hi + pad).ceil() }
    }

    fn y(&self, v: f64) -> f64 {
        TOP + (H - TOP - BOTTOM) * (1.0 - (v - self.lo) / (self.hi - self.lo))
    }
}

fn frame(out: &mut String, title: &str, ylabel: &str, axis: &Axis) {
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(out, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, (W - RIGHT + LEFT) / 2.0, esc(title));
    let (x0, x1, y0, y1) = (LEFT, W - RIGHT, TOP, H - BOTTOM);
    let _ = writeln!(out, r#"<path d="M{x0} {y0}V{y1}H{x1}" fill="none" stroke="black"/>"#);
    for i in 0..=4 {
        let v = axis.lo + (axis.hi - axis.lo) * i as f64 / 4.0;
        let y = axis.y(v);
        let _ = writeln!(out, r##"<line x1="{}" y1="{y:.2}" x2="{x0}" y2="{y:.2}" stroke="black"/><text x="{}" y="{:.2}" text-anchor="end">{v:.1}</text>"##, x0 - 4.0, x0 - 6.0, y + 4.0);
    }
    let _ = writeln!(out, r#"<text x="14" y="{}" transform="rotate(-90 14 {})" text-anchor="middle">{}</text>"#, (y0 + y1) / 2.0, (y0 + y1) / 2.0, esc(ylabel));
}

fn legend(out: &mut String, entries: &[(String, &str)], notes: &[String]) {
    let x = W - RIGHT + 12.0;
    for (i, (name, color)) in entries.iter().enumerate() {
        let y = TOP + 16.0 * i as f64;
        let _ = writeln!(out, r#"<rect x="{x}" y="{y}" width="10" height="10" fill="{color}"/><text x="{}" y="{}">{}</text>"#, x + 14.0, y + 9.0, esc(name));
    }
    for (i, note) in notes.iter().enumerate() {
        let y = TOP + 16.0 * (entries.len() + i) as f64 + 8.0;
        let _ = writeln!(out, r#"<text class="note" x="{x}" y="{}">{}</text>"#, y + 9.0, esc(note));
    }
}

/// Mean dynamic-subset PSNR per scheduler.
pub fn bar_plot(report: &Report) -> String {
    let bars: Vec<(String, f64)> = schedulers(&report.rows)
        .into_iter()
        .filter_map(|s| report.aggregate(&s, "dynamic").or_else(|| report.aggregate(&s, "all")).map(|a| (s, a.mean_psnr)))
        .collect();
    let axis = Axis::new(bars.iter().map(|b| b.1));
    let mut out = String::new();
    frame(&mut out, "Mean PSNR-mu on dynamic scenes", "PSNR-mu (dB)", &axis);
    let slot = (W - LEFT - RIGHT) / bars.len().max(1) as f64;
    let base = axis.y(axis.lo);
    for (i, (name, v)) in bars.iter().enumerate() {
        let x = LEFT + slot * i as f64 + slot * 0.15;
        let y = axis.y(*v);
        let _ = writeln!(
            out,
            r#"<rect data-series="{n}" data-key="dynamic" data-value="{v}" x="{x:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
            slot * 0.7,
            base - y,
            COLORS[i % COLORS.len()],
            n = esc(name),
        );
        let _ = writeln!(out, r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#, x + slot * 0.35, H - BOTTOM + 16.0, esc(name));
    }
    out.push_str("</svg>\n");
    out
}

/// Bucketed PSNR per scheduler. Empty buckets are left out of every series
/// and listed in the legend.
pub fn motion_plot(report: &Report) -> String {
    let names = schedulers(&report.rows);
    let mut labels: Vec<String> = Vec::new();
    for b in &report.buckets {
        if !labels.contains(&b.bucket) {
            labels.push(b.bucket.clone());
        }
    }
    let empty: Vec<String> = labels
        .iter()
        .filter(|l| report.buckets.iter().filter(|b| &&b.bucket == l).all(|b| b.mean_psnr.is_none()))
        .map(|l| format!("empty bucket {l} omitted"))
        .collect();
    let axis = Axis::new(report.buckets.iter().filter_map(|b| b.mean_psnr));
    let mut out = String::new();
    frame(&mut out, "PSNR-mu by motion magnitude (px)", "PSNR-mu (dB)", &axis);
    let step = (W - LEFT - RIGHT) / labels.len().max(1) as f64;
    let xs = |i: usize| LEFT + step * (i as f64 + 0.5);
    for (i, l) in labels.iter().enumerate() {
        let _ = writeln!(out, r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#, xs(i), H - BOTTOM + 16.0, esc(l));
    }
    let mut entries = Vec::new();
    for (k, name) in names.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let pts: Vec<(usize, f64)> = labels
            .iter()
            .enumerate()
            .filter_map(|(i, l)| {
                report.buckets.iter().find(|b| &b.scheduler == name && &b.bucket == l).and_then(|b| b.mean_psnr).map(|v| (i, v))
            })
            .collect();
        if pts.is_empty() {
            continue;
        }
        let d: Vec<String> = pts
            .iter()
            .enumerate()
            .map(|(j, (i, v))| format!("{}{:.2} {:.2}", if j == 0 { "M" } else { "L" }, xs(*i), axis.y(*v)))
            .collect();
        let _ = writeln!(out, r#"<path d="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, d.join(""));
        for (i, v) in &pts {
            let _ = writeln!(
                out,
                r#"<circle data-series="{}" data-key="{}" data-value="{v}" cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#,
                esc(name),
                esc(&labels[*i]),
                xs(*i),
                axis.y(*v)
            );
        }
        entries.push((name.clone(), color));
    }
    legend(&mut out, &entries, &empty);
    out.push_str("</svg>\n");
    out
}

/// Ours against the per-scene best and worst candidate scores.
pub fn gap_plot(report: &Report) -> String {
    let series: [(&str, fn(&crate::report::GapRow) -> f64); 4] =
        [("worst", |r| r.worst), ("average", |r| r.average), ("ours", |r| r.ours), ("best", |r| r.best)];
    let axis = Axis::new(report.gap.iter().flat_map(|r| [r.worst, r.best, r.ours, r.average]));
    let mut out = String::new();
    frame(&mut out, "Oracle gap per scene", "quality score", &axis);
    let slot = (W - LEFT - RIGHT) / report.gap.len().max(1) as f64;
    let base = axis.y(axis.lo);
    for (i, row) in report.gap.iter().enumerate() {
        for (k, (name, f)) in series.iter().enumerate() {
            let v = f(row);
            let w = slot * 0.8 / series.len() as f64;
            let x = LEFT + slot * (i as f64 + 0.1) + w * k as f64;
            let y = axis.y(v);
            let _ = writeln!(
                out,
                r#"<rect data-series="{name}" data-key="{}" data-value="{v}" x="{x:.2}" y="{y:.2}" width="{w:.2}" height="{:.2}" fill="{}"/>"#,
                esc(&row.scene),
                base - y,
                COLORS[k]
            );
        }
        let _ = writeln!(out, r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#, LEFT + slot * (i as f64 + 0.5), H - BOTTOM + 16.0, esc(&row.scene));
    }
    let entries: Vec<(String, &str)> = series.iter().enumerate().map(|(k, (n, _))| (n.to_string(), COLORS[k])).collect();
    legend(&mut out, &entries, &[]);
    out.push_str("</svg>\n");
    out
}

fn attr<'a>(tag: &'a str, name: &str) -> Option<&'a str> {
    let key = format!(" {name}=\"");
    let start = tag.find(&key)? + key.len();
    let len = tag[start..].find('"')?;
    Some(&tag[start..start + len])
}

fn unesc(s: &str) -> String {
    s.replace("&quot;", "\"").replace("&lt;", "<").replace("&gt;", ">").replace("&amp;", "&")
}

/// Every `data-value` element of an SVG, in document order.
pub fn extract_values(svg: &str) -> Vec<PlotValue> {
    svg.split('<')
        .filter_map(|tag| {
            let value = attr(tag, "data-value")?.parse().ok()?;
            Some(PlotValue { series: unesc(attr(tag, "data-series")?), key: unesc(attr(tag, "data-key")?), value })
        })
        .collect()
}

/// Legend notes of an SVG.
pub fn extract_notes(svg: &str) -> Vec<String> {
    svg.split("<text class=\"note\"")
        .skip(1)
        .filter_map(|t| Some(unesc(&t[t.find('>')? + 1..t.find("</text>")?])))
        .collect()
}

/// Writes `<stem>_bars.svg`, `<stem>_motion.svg` and, when the report has a
/// gap table, `<stem>_gap.svg`.
pub fn emit_plots(report: &Report, dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut plots = vec![("bars", bar_plot(report)), ("motion", motion_plot(report))];
    if !report.gap.is_empty() {
        plots.push(("gap", gap_plot(report)));
    }
    let mut paths = Vec::new();
    for (name, svg) in plots {
        let p = dir.join(format!("{stem}_{name}.svg"));
        fs::write(&p, svg)?;
        paths.push(p);
    }
    Ok(paths)
}
