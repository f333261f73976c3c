//! Standalone SVG rendering for reward curves, trajectory projections and
//! box plots.

use std::fmt::Write;

use anyhow::{bail, ensure, Result};
use toolkin_core::trajectory::Trajectory;

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 48.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

/// Named numeric columns read from a CSV with a header row.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

pub fn read_table(text: &str) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(text.as_bytes());
    let names: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    ensure!(!names.is_empty() && names.iter().any(|n| !n.is_empty()), "CSV has no header");
    let mut columns = vec![Vec::new(); names.len()];
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        for (c, field) in rec.iter().enumerate() {
            if field.is_empty() {
                continue;
            }
            let v: f64 = field.parse().map_err(|_| anyhow::anyhow!("row {}: '{field}' is not a number", i + 2))?;
            columns[c].push(v);
        }
    }
    ensure!(columns.iter().any(|c| !c.is_empty()), "CSV has no data rows");
    Ok(Table { names, columns })
}

struct Frame {
    x0: f64,
    y0: f64,
    w: f64,
    h: f64,
    xr: (f64, f64),
    yr: (f64, f64),
}

impl Frame {
    fn new(x0: f64, y0: f64, w: f64, h: f64, xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Self {
        Self { x0, y0, w, h, xr: range(xs), yr: range(ys) }
    }

    fn px(&self, x: f64) -> f64 {
        self.x0 + (x - self.xr.0) / (self.xr.1 - self.xr.0) * self.w
    }

    fn py(&self, y: f64) -> f64 {
        self.y0 + self.h - (y - self.yr.0) / (self.yr.1 - self.yr.0) * self.h
    }

    fn axes(&self, out: &mut String, xlabel: &str, ylabel: &str) {
        let _ = writeln!(
            out,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#444"/>"##,
            self.x0, self.y0, self.w, self.h
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="12">{}</text>"#,
            self.x0 + self.w / 2.0,
            self.y0 + self.h + 32.0,
            escape(xlabel)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="12" transform="rotate(-90 {:.2} {:.2})" text-anchor="middle">{}</text>"#,
            self.x0 - 34.0,
            self.y0 + self.h / 2.0,
            self.x0 - 34.0,
            self.y0 + self.h / 2.0,
            escape(ylabel)
        );
        for (v, x) in [(self.xr.0, self.x0), (self.xr.1, self.x0 + self.w)] {
            let _ = writeln!(
                out,
                r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle" font-size="10">{}</text>"#,
                self.y0 + self.h + 14.0,
                tick(v)
            );
        }
        for (v, y) in [(self.yr.0, self.y0 + self.h), (self.yr.1, self.y0)] {
            let _ = writeln!(
                out,
                r#"<text x="{:.2}" y="{y:.2}" text-anchor="end" font-size="10">{}</text>"#,
                self.x0 - 4.0,
                tick(v)
            );
        }
    }
}

fn range(it: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = it.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        let pad = if lo.abs() > 1e-12 { lo.abs() * 0.05 } else { 0.5 };
        return (lo - pad, hi + pad);
    }
    let pad = (hi - lo) * 0.05;
    (lo - pad, hi + pad)
}

fn tick(v: f64) -> String {
    format!("{v:.3}")
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    s
}

fn polyline(out: &mut String, frame: &Frame, pts: impl Iterator<Item = (f64, f64)>, color: &str, label: &str) {
    let points: Vec<String> = pts.map(|(x, y)| format!("{:.2},{:.2}", frame.px(x), frame.py(y))).collect();
    let _ = writeln!(
        out,
        r#"<polyline class="series" data-label="{}" fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
        escape(label),
        points.join(" ")
    );
}

/// One polyline per series; the first column is the x axis.
pub fn curve_svg(tables: &[Table]) -> Result<String> {
    let mut series: Vec<(&str, Vec<(f64, f64)>)> = Vec::new();
    for t in tables {
        ensure!(t.names.len() >= 2, "curve CSV needs an x column and at least one series");
        let xs = &t.columns[0];
        for (name, ys) in t.names.iter().zip(&t.columns).skip(1) {
            ensure!(ys.len() == xs.len(), "column '{name}' has {} values, x has {}", ys.len(), xs.len());
            series.push((name, xs.iter().copied().zip(ys.iter().copied()).collect()));
        }
    }
    let pts = series.iter().flat_map(|(_, p)| p.iter().copied());
    let frame = Frame::new(
        MARGIN + 12.0,
        40.0,
        W - 2.0 * MARGIN - 12.0,
        H - 40.0 - MARGIN - 12.0,
        pts.clone().map(|p| p.0),
        pts.map(|p| p.1),
    );
    let mut out = header("reward curves");
    frame.axes(&mut out, &tables[0].names[0], "mean episode reward");
    for (i, (name, pts)) in series.iter().enumerate() {
        polyline(&mut out, &frame, pts.iter().copied(), PALETTE[i % PALETTE.len()], name);
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// Tool tip paths projected onto the xy and xz planes, side by side.
pub fn traj_svg(trajs: &[Trajectory]) -> Result<String> {
    ensure!(trajs.iter().all(|t| !t.is_empty()), "trajectory has no waypoints");
    let paths: Vec<_> = trajs.iter().map(Trajectory::tooltip_path).collect();
    let all = paths.iter().flatten();
    let panel_w = (W - 3.0 * MARGIN) / 2.0;
    let panel_h = H - 40.0 - MARGIN - 12.0;
    let xy = Frame::new(MARGIN, 40.0, panel_w, panel_h, all.clone().map(|p| p.x), all.clone().map(|p| p.y));
    let xz = Frame::new(2.0 * MARGIN + panel_w, 40.0, panel_w, panel_h, all.clone().map(|p| p.x), all.map(|p| p.z));
    let mut out = header("tool tip trajectories");
    xy.axes(&mut out, "x (m)", "y (m)");
    xz.axes(&mut out, "x (m)", "z (m)");
    for (i, path) in paths.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let label = format!("trajectory {i}");
        polyline(&mut out, &xy, path.iter().map(|p| (p.x, p.y)), color, &label);
        polyline(&mut out, &xz, path.iter().map(|p| (p.x, p.z)), color, &label);
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// Five-number summary with Tukey whiskers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxStats {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub whisker_lo: f64,
    pub whisker_hi: f64,
}

/// Quantile by linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let i = h.floor() as usize;
    let frac = h - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

pub fn box_stats(values: &[f64]) -> Result<BoxStats> {
    ensure!(!values.is_empty(), "no values for box plot");
    if values.iter().any(|v| !v.is_finite()) {
        bail!("non-finite value in box plot input");
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let (q1, median, q3) = (quantile(&s, 0.25), quantile(&s, 0.5), quantile(&s, 0.75));
    let iqr = q3 - q1;
    let whisker_lo = s.iter().copied().find(|&v| v >= q1 - 1.5 * iqr).unwrap_or(q1);
    let whisker_hi = s.iter().rev().copied().find(|&v| v <= q3 + 1.5 * iqr).unwrap_or(q3);
    Ok(BoxStats { q1, median, q3, whisker_lo, whisker_hi })
}

/// One box per column.
pub fn box_svg(tables: &[Table]) -> Result<String> {
    let cols: Vec<(&str, &[f64])> = tables
        .iter()
        .flat_map(|t| t.names.iter().map(String::as_str).zip(t.columns.iter().map(Vec::as_slice)))
        .filter(|(_, c)| !c.is_empty())
        .collect();
    let stats = cols.iter().map(|(_, c)| box_stats(c)).collect::<Result<Vec<_>>>()?;
    let all = cols.iter().flat_map(|(_, c)| c.iter().copied());
    let frame = Frame::new(MARGIN + 12.0, 40.0, W - 2.0 * MARGIN - 12.0, H - 40.0 - MARGIN - 12.0, [0.0, 1.0].into_iter(), all);
    let mut out = header("box plot");
    frame.axes(&mut out, "", "value");
    let slot = frame.w / cols.len() as f64;
    for (i, ((name, values), st)) in cols.iter().zip(&stats).enumerate() {
        let cx = frame.x0 + slot * (i as f64 + 0.5);
        let half = (slot * 0.25).min(40.0);
        let (y1, ym, y3) = (frame.py(st.q1), frame.py(st.median), frame.py(st.q3));
        let _ = writeln!(
            out,
            r#"<g class="box" data-label="{}" data-q1="{}" data-median="{}" data-q3="{}" data-whisker-lo="{}" data-whisker-hi="{}">"#,
            escape(name),
            st.q1,
            st.median,
            st.q3,
            st.whisker_lo,
            st.whisker_hi
        );
        let _ = writeln!(
            out,
            r##"<line class="whisker" x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="#333"/>"##,
            frame.py(st.whisker_lo),
            frame.py(st.whisker_hi)
        );
        let _ = writeln!(
            out,
            r##"<rect class="iqr" x="{:.2}" y="{y3:.2}" width="{:.2}" height="{:.2}" fill="#cfe2f3" stroke="#333"/>"##,
            cx - half,
            2.0 * half,
            (y1 - y3).max(0.0)
        );
        let _ = writeln!(
            out,
            r##"<line class="median" x1="{:.2}" y1="{ym:.2}" x2="{:.2}" y2="{ym:.2}" stroke="#d62728" stroke-width="2"/>"##,
            cx - half,
            cx + half
        );
        for v in values.iter().filter(|&&v| v < st.whisker_lo || v > st.whisker_hi) {
            let _ = writeln!(
                out,
                r##"<circle class="outlier" cx="{cx:.2}" cy="{:.2}" r="2.5" fill="none" stroke="#333"/>"##,
                frame.py(*v)
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{cx:.2}" y="{:.2}" text-anchor="middle" font-size="11">{}</text>"#,
            frame.y0 + frame.h + 14.0,
            escape(name)
        );
        out.push_str("</g>\n");
    }
    out.push_str("</svg>\n");
    Ok(out)
}
