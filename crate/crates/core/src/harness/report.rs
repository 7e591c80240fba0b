//! Tabular results, log-linear fits and SVG line charts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::metrics::{fit_loglinear, LogLinearFit};

/// One line of `results.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub model: String,
    pub params: u64,
    pub data_size: usize,
    pub samples_seen: u64,
    pub domain: String,
    pub metric: String,
    pub value: f64,
}

pub fn write_results_csv(path: impl AsRef<Path>, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results_csv(path: impl AsRef<Path>) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| Ok(row?)).collect()
}

/// `metric ≈ intercept + slope · ln(data_size)` for one model and domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitEntry {
    pub model: String,
    pub domain: String,
    pub metric: String,
    pub points: Vec<(f64, f64)>,
    #[serde(flatten)]
    pub fit: LogLinearFit,
}

/// Fits every (model, domain) series of `metric` against data size.
/// Series with fewer than two distinct sizes are skipped.
pub fn fit_rows(rows: &[ResultRow], metric: &str) -> Vec<FitEntry> {
    let mut series: BTreeMap<(String, String), Vec<(f64, f64)>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.metric == metric) {
        series
            .entry((r.model.clone(), r.domain.clone()))
            .or_default()
            .push((r.data_size as f64, r.value));
    }
    series
        .into_iter()
        .filter_map(|((model, domain), mut points)| {
            points.sort_by(|a, b| a.0.total_cmp(&b.0));
            let fit = fit_loglinear(&points).ok()?;
            Some(FitEntry {
                model,
                domain,
                metric: metric.to_string(),
                points,
                fit,
            })
        })
        .collect()
}

/// A named polyline for [`line_chart_svg`].
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

fn nice_ticks(lo: f64, hi: f64) -> Vec<f64> {
    if !(hi > lo) {
        return vec![lo];
    }
    let raw = (hi - lo) / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-9 * step {
        out.push(t);
        t += step;
    }
    out
}

fn fmt_tick(v: f64) -> String {
    if v.abs() >= 1e6 {
        format!("{:.0}M", v / 1e6)
    } else if v.abs() >= 1e3 {
        format!("{:.0}k", v / 1e3)
    } else if v.fract().abs() < 1e-9 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

/// Standalone SVG line chart. With `log_x` the x axis is logarithmic and
/// ticks sit at every point's x value.
pub fn line_chart_svg(title: &str, x_label: &str, y_label: &str, series: &[Series], log_x: bool) -> String {
    let (w, h) = (640.0, 420.0);
    let (left, right, top, bottom) = (70.0, 150.0, 40.0, 60.0);
    let tx = |x: f64| if log_x { x.max(f64::MIN_POSITIVE).ln() } else { x };
    let pts: Vec<(f64, f64)> = series.iter().flat_map(|s| s.points.iter().copied()).collect();
    let (mut x0, mut x1) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, p| (a.0.min(tx(p.0)), a.1.max(tx(p.0))));
    let (mut y0, mut y1) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, p| (a.0.min(p.1), a.1.max(p.1)));
    if pts.is_empty() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    y0 = y0.min(0.0);
    if y1 - y0 < 1e-12 {
        y1 = y0 + 1.0;
    }
    y1 += 0.05 * (y1 - y0);
    let px = |x: f64| left + (tx(x) - x0) / (x1 - x0) * (w - left - right);
    let py = |y: f64| h - bottom - (y - y0) / (y1 - y0) * (h - top - bottom);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#, (left + w - right) / 2.0, escape(title));
    let (ax0, ax1, ay0, ay1) = (left, w - right, h - bottom, top);
    let _ = writeln!(s, r#"<path d="M{ax0},{ay1} L{ax0},{ay0} L{ax1},{ay0}" stroke="black" fill="none"/>"#);
    let mut xticks: Vec<f64> = if log_x {
        pts.iter().map(|p| p.0).collect()
    } else {
        nice_ticks(x0, x1)
    };
    xticks.sort_by(f64::total_cmp);
    xticks.dedup();
    for t in xticks {
        let x = px(t);
        let _ = writeln!(s, r#"<line x1="{x:.1}" y1="{ay0}" x2="{x:.1}" y2="{}" stroke="black"/><text x="{x:.1}" y="{}" text-anchor="middle">{}</text>"#, ay0 + 5.0, ay0 + 18.0, fmt_tick(t));
    }
    for t in nice_ticks(y0, y1) {
        let y = py(t);
        let _ = writeln!(s, r##"<line x1="{ax0}" y1="{y:.1}" x2="{ax1}" y2="{y:.1}" stroke="#e0e0e0"/><text x="{}" y="{:.1}" text-anchor="end">{}</text>"##, ax0 - 6.0, y + 4.0, fmt_tick(t));
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}{}</text>"#, (ax0 + ax1) / 2.0, h - 18.0, escape(x_label), if log_x { " (log scale)" } else { "" });
    let _ = writeln!(s, r#"<text transform="translate(18,{}) rotate(-90)" text-anchor="middle">{}</text>"#, (ay0 + ay1) / 2.0, escape(y_label));
    for (i, ser) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut p = ser.points.clone();
        p.sort_by(|a, b| a.0.total_cmp(&b.0));
        let d: Vec<String> = p.iter().map(|&(x, y)| format!("{:.1},{:.1}", px(x), py(y))).collect();
        if !d.is_empty() {
            let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, d.join(" "));
        }
        for &(x, y) in &p {
            let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{color}"/>"#, px(x), py(y));
        }
        let ly = top + 10.0 + 18.0 * i as f64;
        let _ = writeln!(s, r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#, w - right + 12.0, w - right + 32.0, w - right + 38.0, ly + 4.0, escape(&ser.name));
    }
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Series of `metric` in `domain`, one per model, against data size or samples seen.
pub fn series_by_model(rows: &[ResultRow], domain: &str, metric: &str, by_samples: bool) -> Vec<Series> {
    let mut map: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.domain == domain && r.metric == metric) {
        let x = if by_samples { r.samples_seen as f64 } else { r.data_size as f64 };
        map.entry(r.model.clone()).or_default().push((x, r.value));
    }
    map.into_iter().map(|(name, points)| Series { name, points }).collect()
}

/// Writes `results.csv`, `fits.json` and one chart per domain (against data
/// size, and against samples seen) into `dir`.
pub fn write_report(dir: impl AsRef<Path>, rows: &[ResultRow]) -> Result<Vec<FitEntry>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    write_results_csv(dir.join("results.csv"), rows)?;
    let fits = fit_rows(rows, "cider");
    std::fs::write(dir.join("fits.json"), serde_json::to_string_pretty(&fits)?)?;
    let mut domains: Vec<&str> = rows.iter().filter(|r| r.metric == "cider").map(|r| r.domain.as_str()).collect();
    domains.sort_unstable();
    domains.dedup();
    for d in domains {
        let by_data = series_by_model(rows, d, "cider", false);
        let svg = line_chart_svg(&format!("CIDEr ({d}) vs pre-training data"), "pre-training images", "CIDEr", &by_data, true);
        std::fs::write(dir.join(format!("cider_{d}_vs_data.svg")), svg)?;
        let by_samples = series_by_model(rows, d, "cider", true);
        let svg = line_chart_svg(&format!("CIDEr ({d}) vs samples seen"), "samples seen", "CIDEr", &by_samples, true);
        std::fs::write(dir.join(format!("cider_{d}_vs_samples.svg")), svg)?;
    }
    Ok(fits)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(model: &str, n: usize, v: f64) -> ResultRow {
        ResultRow {
            model: model.into(),
            params: 10,
            data_size: n,
            samples_seen: 4 * n as u64,
            domain: "out".into(),
            metric: "cider".into(),
            value: v,
        }
    }

    #[test]
    fn fits_per_model() {
        let rows = vec![row("a", 10, 1.0), row("a", 100, 2.0), row("b", 10, 5.0)];
        let fits = fit_rows(&rows, "cider");
        assert_eq!(fits.len(), 1);
        assert!((fits[0].fit.slope - 1.0 / 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn svg_is_well_formed() {
        let s = line_chart_svg("t <1>", "x", "y", &[Series { name: "m".into(), points: vec![(10.0, 1.0), (1000.0, 3.0)] }], true);
        assert!(s.starts_with("<svg") && s.trim_end().ends_with("</svg>"));
        assert!(s.contains("t &lt;1&gt;") && s.contains("polyline") && s.contains(">1k<"));
        let empty = line_chart_svg("e", "x", "y", &[], false);
        assert!(empty.contains("</svg>"));
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![row("a", 10, 1.5), row("a", 100, 2.25)];
        write_results_csv(dir.path().join("r.csv"), &rows).unwrap();
        let text = std::fs::read_to_string(dir.path().join("r.csv")).unwrap();
        assert!(text.starts_with("model,params,data_size,samples_seen,domain,metric,value\n"));
        assert_eq!(read_results_csv(dir.path().join("r.csv")).unwrap(), rows);
    }
}
