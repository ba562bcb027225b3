//! Text summaries and standalone SVG line plots for closed-loop logs.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::sim::{LogRow, PlatoonState};

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub dashed: bool,
}

impl Series {
    pub fn new(label: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Self { label: label.into(), points, dashed: false }
    }

    pub fn dashed(mut self) -> Self {
        self.dashed = true;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];
const W: f64 = 800.0;
const H: f64 = 420.0;
const ML: f64 = 70.0;
const MR: f64 = 170.0;
const MT: f64 = 40.0;
const MB: f64 = 55.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Roughly five round tick values covering `[lo, hi]`.
fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = (hi - lo).max(1e-12);
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-9 * span {
        out.push(if t.abs() < 1e-12 * step { 0.0 } else { t });
        t += step;
    }
    out
}

impl LinePlot {
    fn bounds(&self) -> Result<(f64, f64, f64, f64)> {
        let pts = self.series.iter().flat_map(|s| s.points.iter()).filter(|(x, y)| x.is_finite() && y.is_finite());
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in pts {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if !x0.is_finite() {
            return Err(Error::MalformedLog(format!("plot `{}` has no finite points", self.title)));
        }
        if x1 - x0 < 1e-12 {
            x1 = x0 + 1.0;
        }
        let pad = ((y1 - y0) * 0.05).max(0.5);
        Ok((x0, x1, y0 - pad, y1 + pad))
    }

    pub fn to_svg(&self) -> Result<String> {
        let (x0, x1, y0, y1) = self.bounds()?;
        let pw = W - ML - MR;
        let ph = H - MT - MB;
        let sx = |x: f64| ML + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| MT + (y1 - y) / (y1 - y0) * ph;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#, ML + pw / 2.0, escape(&self.title));
        for t in ticks(x0, x1) {
            let x = sx(t);
            let _ = writeln!(s, r##"<line x1="{x:.2}" y1="{MT}" x2="{x:.2}" y2="{:.2}" stroke="#e5e5e5"/>"##, MT + ph);
            let _ = writeln!(s, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{t}</text>"#, MT + ph + 16.0);
        }
        for t in ticks(y0, y1) {
            let y = sy(t);
            let _ = writeln!(s, r##"<line x1="{ML}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#e5e5e5"/>"##, ML + pw);
            let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{t}</text>"#, ML - 6.0, y + 4.0);
        }
        let _ = writeln!(s, r##"<rect x="{ML}" y="{MT}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>"##);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, ML + pw / 2.0, H - 12.0, escape(&self.x_label));
        let _ = writeln!(
            s,
            r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
            MT + ph / 2.0,
            MT + ph / 2.0,
            escape(&self.y_label)
        );
        for (i, ser) in self.series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let pts: Vec<String> = ser
                .points
                .iter()
                .filter(|(x, y)| x.is_finite() && y.is_finite())
                .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                .collect();
            let dash = if ser.dashed { r#" stroke-dasharray="6 4""# } else { "" };
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.6"{dash} points="{}"/>"#,
                pts.join(" ")
            );
            let ly = MT + 10.0 + 18.0 * i as f64;
            let lx = ML + pw + 12.0;
            let _ = writeln!(s, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"{dash}/>"#, lx + 24.0);
            let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, lx + 30.0, ly + 4.0, escape(&ser.label));
        }
        s.push_str("</svg>\n");
        Ok(s)
    }
}

/// Velocity, position and distance plots, in that order. `v_ref` adds the
/// reference trace to the velocity plot when given; `show_bound` adds the
/// tightened HV gap bound to the distance plot.
pub fn trajectory_plots(rows: &[LogRow], delta: f64, v_ref: Option<&dyn Fn(f64) -> f64>, show_bound: bool) -> Result<[LinePlot; 3]> {
    let first = rows.first().ok_or_else(|| Error::MalformedLog("log has no data rows".into()))?;
    let n_av = first.p_av.len();
    let col = |f: &dyn Fn(&LogRow) -> f64| rows.iter().map(|r| (r.t, f(r))).collect::<Vec<_>>();

    let mut vel = Vec::new();
    if let Some(f) = v_ref {
        vel.push(Series::new("v_ref", col(&|r| f(r.t))).dashed());
    }
    for n in 0..n_av {
        vel.push(Series::new(format!("AV{}", n + 1), col(&|r| r.v_av[n])));
    }
    vel.push(Series::new("HV", col(&|r| r.v_hv)));

    let mut pos: Vec<Series> = (0..n_av).map(|n| Series::new(format!("AV{}", n + 1), col(&|r| r.p_av[n]))).collect();
    pos.push(Series::new("HV", col(&|r| r.p_hv)));

    let mut dist: Vec<Series> =
        (1..n_av).map(|n| Series::new(format!("AV{}-AV{}", n, n + 1), col(&|r| r.p_av[n - 1] - r.p_av[n]))).collect();
    dist.push(Series::new(format!("AV{n_av}-HV"), col(&|r| r.dist_av_hv)));
    dist.push(Series::new("safe distance", col(&|_| delta)).dashed());
    if show_bound {
        dist.push(Series::new("tightened bound", col(&|r| r.bound)).dashed());
    }

    let plot = |title: &str, y: &str, series| LinePlot { title: title.into(), x_label: "time t (s)".into(), y_label: y.into(), series };
    Ok([
        plot("Velocity tracking", "velocity (m/s)", vel),
        plot("Vehicle positions", "position (m)", pos),
        plot("Inter-vehicle distances", "distance (m)", dist),
    ])
}

pub const PLOT_FILES: [&str; 3] = ["velocity.svg", "position.svg", "distance.svg"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingStats {
    pub mean: f64,
    pub max: f64,
    pub std: f64,
    pub samples: usize,
}

impl TimingStats {
    pub fn from_samples(xs: &[f64]) -> Option<Self> {
        if xs.is_empty() {
            return None;
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Some(Self { mean, max: xs.iter().copied().fold(f64::NEG_INFINITY, f64::max), std: var.sqrt(), samples: xs.len() })
    }
}

/// Final positions per vehicle and smallest HV gap.
pub fn run_summary(label: &str, final_state: &PlatoonState, min_gap: f64) -> String {
    let mut s = String::new();
    let _ = write!(s, "{label:<10}");
    for (n, p) in final_state.p_av.iter().enumerate() {
        let _ = write!(s, "  p_AV{}={:9.2} m", n + 1, p);
    }
    let _ = write!(s, "  p_HV={:9.2} m  min HV-AV={:7.3} m", final_state.p_hv, min_gap);
    s
}

pub fn timing_table(rows: &[(&str, TimingStats)]) -> String {
    let mut s = String::from("mode        mean (s)     max (s)      std (s)      steps\n");
    for (label, t) in rows {
        let _ = writeln!(s, "{label:<10}  {:<11.3e}  {:<11.3e}  {:<11.3e}  {}", t.mean, t.max, t.std, t.samples);
    }
    s
}

pub fn median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}
