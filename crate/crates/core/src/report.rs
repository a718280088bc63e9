//! Results tables and log-log speedup/recall plots.
//!
//! Plot mapping, for a scenario's points with recall > 0 and speedup > 0:
//! `lx = log10(recall)`, `ly = log10(speedup)`. The x range spans all
//! frontier points; the y range also covers `ly = 0`. A zero-width range is
//! widened to 0.1 decades around its value, then each range is padded by 5%
//! of its width on both sides. Pixels: `px = LEFT + (lx - xlo) / (xhi - xlo)
//! * PLOT_W` and `py = TOP + (yhi - ly) / (yhi - ylo) * PLOT_H`, printed with
//! three decimals.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{pareto_points, RunRecord};
use crate::index::METHODS;

pub const CSV_HEADER: &str = "scenario,method,params,mean_recall,speedup,search_s,event_s,peak_mb,seed";
pub const MIB: f64 = 1_048_576.0;

pub const WIDTH: f64 = 760.0;
pub const HEIGHT: f64 = 480.0;
pub const LEFT: f64 = 70.0;
pub const TOP: f64 = 30.0;
pub const PLOT_W: f64 = 500.0;
pub const PLOT_H: f64 = 400.0;

/// One completed run, as written to `results.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub scenario: String,
    pub method: String,
    pub params: String,
    pub mean_recall: f64,
    pub speedup: Option<f64>,
    pub search_s: f64,
    pub event_s: f64,
    pub peak_mb: f64,
    pub seed: u64,
}

impl ResultRow {
    pub fn from_record(r: &RunRecord) -> Self {
        Self {
            scenario: r.scenario.clone(),
            method: r.method.clone(),
            params: r.params_string(),
            mean_recall: r.mean_recall,
            speedup: r.speedup,
            search_s: r.search_s,
            event_s: r.event_s,
            peak_mb: r.peak_bytes as f64 / MIB,
            seed: r.seed,
        }
    }
}

pub fn rows(records: &[RunRecord]) -> Vec<ResultRow> {
    records.iter().filter(|r| r.error.is_none()).map(ResultRow::from_record).collect()
}

pub fn csv_string(rows: &[ResultRow]) -> Result<String> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(CSV_HEADER.split(','))?;
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Mismatch(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn parse_csv(text: &str) -> Result<Vec<ResultRow>> {
    let mut r = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != CSV_HEADER {
        return Err(Error::Parse { offset: 0, message: format!("unexpected header {header:?}") });
    }
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Writes `results.csv` (completed runs) and `results.json` (every record).
pub fn write_results(records: &[RunRecord], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv_path = dir.join("results.csv");
    std::fs::write(&csv_path, csv_string(&rows(records))?).map_err(|e| Error::io(&csv_path, e))?;
    let json_path = dir.join("results.json");
    let json = serde_json::to_string_pretty(records)?;
    std::fs::write(&json_path, json + "\n").map_err(|e| Error::io(&json_path, e))
}

pub fn read_results(dir: &Path) -> Result<Vec<RunRecord>> {
    let path = dir.join("results.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn colour(method: &str) -> &'static str {
    const PALETTE: [&str; 5] = ["#444444", "#d62728", "#2ca02c", "#1f77b4", "#9467bd"];
    METHODS.iter().position(|m| *m == method).map_or("#8c564b", |i| PALETTE[i])
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    let (lo, hi) = if hi - lo <= 0.0 { (lo - 0.05, hi + 0.05) } else { (lo, hi) };
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

/// 1-2-5 ticks inside `[lo, hi]` (log10 units).
fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let mut out = Vec::new();
    for e in (lo.floor() as i32 - 1)..=(hi.ceil() as i32) {
        for m in [1.0, 2.0, 5.0] {
            let v = m * 10f64.powi(e);
            if (lo..=hi).contains(&v.log10()) {
                out.push(v);
            }
        }
    }
    out
}

fn label(v: f64) -> String {
    let s = format!("{v}");
    if s.len() > 8 {
        format!("{v:e}")
    } else {
        s
    }
}

/// Per-method frontiers of one scenario: `method -> [(recall, speedup)]`.
pub fn frontiers(rows: &[ResultRow], scenario: &str) -> BTreeMap<String, Vec<(f64, f64)>> {
    let mut by_method: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.scenario == scenario) {
        if let Some(s) = r.speedup {
            if r.mean_recall > 0.0 && s > 0.0 {
                by_method.entry(r.method.clone()).or_default().push((r.mean_recall, s));
            }
        }
    }
    by_method
        .into_iter()
        .map(|(m, pts)| {
            let f = pareto_points(&pts).into_iter().map(|p| (p.recall, p.speedup)).collect();
            (m, f)
        })
        .collect()
}

/// Axis ranges in log10 units: `((xlo, xhi), (ylo, yhi))`.
pub fn plot_ranges(frontiers: &BTreeMap<String, Vec<(f64, f64)>>) -> Option<((f64, f64), (f64, f64))> {
    let pts: Vec<(f64, f64)> = frontiers.values().flatten().map(|&(r, s)| (r.log10(), s.log10())).collect();
    if pts.is_empty() {
        return None;
    }
    let fold = |f: fn(&(f64, f64)) -> f64, init: (f64, f64)| {
        pts.iter().map(f).fold(init, |(lo, hi), v| (lo.min(v), hi.max(v)))
    };
    let x = fold(|p| p.0, (f64::INFINITY, f64::NEG_INFINITY));
    let y = fold(|p| p.1, (0.0, 0.0));
    Some((padded(x.0, x.1), padded(y.0, y.1)))
}

pub fn plot_svg(rows: &[ResultRow], scenario: &str) -> Result<String> {
    let fr = frontiers(rows, scenario);
    let ((xlo, xhi), (ylo, yhi)) = plot_ranges(&fr)
        .ok_or_else(|| Error::InsufficientData(format!("no plottable rows for scenario `{scenario}`")))?;
    let px = |r: f64| LEFT + (r.log10() - xlo) / (xhi - xlo) * PLOT_W;
    let py = |s: f64| TOP + (yhi - s.log10()) / (yhi - ylo) * PLOT_H;
    let (right, bottom) = (LEFT + PLOT_W, TOP + PLOT_H);

    let mut svg = String::new();
    let w = &mut svg;
    writeln!(w, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#).unwrap();
    writeln!(w, r#"<title>{scenario}: speedup over exhaustive search vs mean recall</title>"#).unwrap();
    writeln!(w, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#).unwrap();
    writeln!(w, r#"<rect x="{LEFT}" y="{TOP}" width="{PLOT_W}" height="{PLOT_H}" fill="none" stroke="black"/>"#).unwrap();
    for t in ticks(xlo, xhi) {
        let x = px(t);
        writeln!(w, r#"<line x1="{x:.3}" y1="{bottom}" x2="{x:.3}" y2="{:.3}" stroke="black"/><text x="{x:.3}" y="{:.3}" text-anchor="middle">{}</text>"#, bottom + 5.0, bottom + 18.0, label(t)).unwrap();
    }
    for t in ticks(ylo, yhi) {
        let y = py(t);
        writeln!(w, r#"<line x1="{:.3}" y1="{y:.3}" x2="{LEFT}" y2="{y:.3}" stroke="black"/><text x="{:.3}" y="{:.3}" text-anchor="end">{}</text>"#, LEFT - 5.0, LEFT - 8.0, y + 4.0, label(t)).unwrap();
    }
    writeln!(w, r#"<text x="{:.3}" y="{:.3}" text-anchor="middle">mean recall (log)</text>"#, LEFT + PLOT_W / 2.0, HEIGHT - 8.0).unwrap();
    writeln!(w, r#"<text transform="translate(16 {:.3}) rotate(-90)" text-anchor="middle">speedup (log)</text>"#, TOP + PLOT_H / 2.0).unwrap();
    let y1 = py(1.0);
    writeln!(w, r#"<line class="reference" x1="{LEFT}" y1="{y1:.3}" x2="{right}" y2="{y1:.3}" stroke="black" stroke-dasharray="6 4"/>"#).unwrap();

    for (i, (method, pts)) in fr.iter().enumerate() {
        let c = colour(method);
        let coords: Vec<String> = pts.iter().map(|&(r, s)| format!("{:.3},{:.3}", px(r), py(s))).collect();
        writeln!(w, r#"<g class="method" data-method="{method}">"#).unwrap();
        writeln!(w, r#"<polyline points="{}" fill="none" stroke="{c}" stroke-width="1.5"/>"#, coords.join(" ")).unwrap();
        for &(r, s) in pts {
            writeln!(w, r#"<circle cx="{:.3}" cy="{:.3}" r="3" fill="{c}" data-recall="{r}" data-speedup="{s}"/>"#, px(r), py(s)).unwrap();
        }
        writeln!(w, "</g>").unwrap();
        let ly = TOP + 10.0 + 20.0 * i as f64;
        writeln!(w, r#"<line x1="{:.3}" y1="{ly:.3}" x2="{:.3}" y2="{ly:.3}" stroke="{c}" stroke-width="2"/><text x="{:.3}" y="{:.3}">{method}</text>"#, right + 15.0, right + 40.0, right + 46.0, ly + 4.0).unwrap();
    }
    let ly = TOP + 10.0 + 20.0 * fr.len() as f64;
    writeln!(w, r#"<line x1="{:.3}" y1="{ly:.3}" x2="{:.3}" y2="{ly:.3}" stroke="black" stroke-dasharray="6 4"/><text x="{:.3}" y="{:.3}">speedup 1</text>"#, right + 15.0, right + 40.0, right + 46.0, ly + 4.0).unwrap();
    svg.push_str("</svg>\n");
    Ok(svg)
}

pub fn plot_speedup_recall(rows: &[ResultRow], scenario: &str, path: &Path) -> Result<()> {
    let svg = plot_svg(rows, scenario)?;
    std::fs::write(path, svg).map_err(|e| Error::io(path, e))
}
