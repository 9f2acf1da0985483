//! Self-contained SVG charts: observed marker series, forecast overlay,
//! actual peaks as vertical lines and hit windows as shaded bands.

use std::collections::BTreeMap;
use std::fmt::Write;

use chrono::NaiveDate;

use crate::error::{Error, Result};
use crate::eval::HitWindow;
use crate::forecast::ForecastRun;
use crate::series::SeriesMap;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf",
];

#[derive(Debug, Clone)]
pub struct ChartOptions {
    pub width: f64,
    pub height: f64,
    pub title: String,
}

impl Default for ChartOptions {
    fn default() -> Self {
        ChartOptions {
            width: 960.0,
            height: 420.0,
            title: String::new(),
        }
    }
}

/// Per marker and date, the prediction of the latest run covering that date.
pub fn forecast_overlay(runs: &[ForecastRun]) -> BTreeMap<String, BTreeMap<NaiveDate, f64>> {
    let mut sorted: Vec<&ForecastRun> = runs.iter().collect();
    sorted.sort_by_key(|r| r.origin);
    let mut out: BTreeMap<String, BTreeMap<NaiveDate, f64>> = BTreeMap::new();
    for run in sorted {
        for (marker, pred) in &run.predictions {
            let line = out.entry(marker.clone()).or_default();
            for (i, v) in pred.values().iter().enumerate() {
                line.insert(pred.date_at(i), *v);
            }
        }
    }
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Renders one chart. `runs` may be empty; `peaks` are actual peak dates.
pub fn render_chart(
    observed: &SeriesMap,
    runs: &[ForecastRun],
    peaks: &[NaiveDate],
    window: Option<HitWindow>,
    opts: &ChartOptions,
) -> Result<String> {
    let first = observed
        .values()
        .next()
        .filter(|s| !s.is_empty())
        .ok_or_else(|| Error::invalid("chart", "no observed series"))?;
    let start = first.start();
    let n_days = first.len();
    let overlay = forecast_overlay(runs);

    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let values = observed
        .values()
        .flat_map(|s| s.values().iter())
        .chain(overlay.values().flat_map(|m| m.values()));
    for &v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return Err(Error::invalid("chart", "no finite values"));
    }
    if hi - lo < 1e-12 {
        hi = lo + 1.0;
    }
    let pad = 0.05 * (hi - lo);
    let (lo, hi) = (lo - pad, hi + pad);

    let (w, h) = (opts.width, opts.height);
    let (left, right, top, bottom) = (60.0, 150.0, 36.0, 40.0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let span = (n_days.max(2) - 1) as f64;
    let x_of = |d: NaiveDate| left + pw * (d - start).num_days() as f64 / span;
    let y_of = |v: f64| top + ph * (hi - v) / (hi - lo);

    let mut s = String::new();
    let _ = writeln!(s, "<?xml version=\"1.0\" encoding=\"UTF-8\"?>");
    let _ = writeln!(s, "<!-- prevcast {} -->", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" style=\"font-family:sans-serif;font-size:11px\">"
    );
    let _ = writeln!(s, "<rect x=\"0\" y=\"0\" width=\"{w}\" height=\"{h}\" style=\"fill:#ffffff\"/>");
    let _ = writeln!(
        s,
        "<text x=\"{left}\" y=\"22\" style=\"font-size:14px;font-weight:bold\">{}</text>",
        escape(&opts.title)
    );

    let end = first.date_at(n_days - 1);
    let clamp = |d: NaiveDate| d.max(start).min(end);
    if let Some(win) = window {
        for &p in peaks {
            let (a, b) = win.span(p);
            let (xa, xb) = (x_of(clamp(a)), x_of(clamp(b)));
            let _ = writeln!(
                s,
                "<rect x=\"{xa:.2}\" y=\"{top:.2}\" width=\"{:.2}\" height=\"{ph:.2}\" style=\"fill:#f2c14e;fill-opacity:0.25\"/>",
                (xb - xa).max(1.0)
            );
        }
    }
    for &p in peaks.iter().filter(|p| **p >= start && **p <= end) {
        let x = x_of(p);
        let _ = writeln!(
            s,
            "<line x1=\"{x:.2}\" y1=\"{top:.2}\" x2=\"{x:.2}\" y2=\"{:.2}\" style=\"stroke:#555555;stroke-width:1;stroke-dasharray:2,2\"/>",
            top + ph
        );
    }

    // axes and ticks
    let _ = writeln!(
        s,
        "<rect x=\"{left}\" y=\"{top}\" width=\"{pw}\" height=\"{ph}\" style=\"fill:none;stroke:#333333;stroke-width:1\"/>"
    );
    for k in 0..=4 {
        let v = lo + (hi - lo) * k as f64 / 4.0;
        let y = y_of(v);
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{:.2}\" style=\"text-anchor:end\">{v:.2}</text>",
            left - 6.0,
            y + 4.0
        );
    }
    let n_ticks = 6.min(n_days);
    for k in 0..n_ticks {
        let i = if n_ticks > 1 { k * (n_days - 1) / (n_ticks - 1) } else { 0 };
        let d = first.date_at(i);
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{:.2}\" style=\"text-anchor:middle\">{d}</text>",
            x_of(d),
            top + ph + 16.0
        );
    }

    for (k, (name, series)) in observed.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let mut pts = String::new();
        for (i, v) in series.values().iter().enumerate().filter(|(_, v)| v.is_finite()) {
            let _ = write!(pts, "{:.2},{:.2} ", x_of(series.date_at(i)), y_of(*v));
        }
        let _ = writeln!(
            s,
            "<polyline points=\"{}\" style=\"fill:none;stroke:{color};stroke-width:1.5\"/>",
            pts.trim_end()
        );
        if let Some(line) = overlay.get(name) {
            let mut pts = String::new();
            for (d, v) in line.iter().filter(|(d, v)| v.is_finite() && **d >= start && **d <= end) {
                let _ = write!(pts, "{:.2},{:.2} ", x_of(*d), y_of(*v));
            }
            if !pts.is_empty() {
                let _ = writeln!(
                    s,
                    "<polyline points=\"{}\" style=\"fill:none;stroke:{color};stroke-width:1.5;stroke-dasharray:5,3\"/>",
                    pts.trim_end()
                );
            }
        }
        let ly = top + 14.0 * k as f64 + 8.0;
        let lx = left + pw + 10.0;
        let _ = writeln!(
            s,
            "<line x1=\"{lx:.2}\" y1=\"{ly:.2}\" x2=\"{:.2}\" y2=\"{ly:.2}\" style=\"stroke:{color};stroke-width:2\"/>",
            lx + 18.0
        );
        let _ = writeln!(s, "<text x=\"{:.2}\" y=\"{:.2}\">{}</text>", lx + 22.0, ly + 4.0, escape(name));
    }
    if !overlay.is_empty() {
        let ly = top + 14.0 * observed.len() as f64 + 8.0;
        let lx = left + pw + 10.0;
        let _ = writeln!(
            s,
            "<line x1=\"{lx:.2}\" y1=\"{ly:.2}\" x2=\"{:.2}\" y2=\"{ly:.2}\" style=\"stroke:#333333;stroke-width:1.5;stroke-dasharray:5,3\"/>",
            lx + 18.0
        );
        let _ = writeln!(s, "<text x=\"{:.2}\" y=\"{:.2}\">forecast</text>", lx + 22.0, ly + 4.0);
    }
    s.push_str("</svg>\n");
    Ok(s)
}
