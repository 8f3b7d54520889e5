//! Minimal static SVG line charts.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn new(label: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Series { label: label.into(), points }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum YScale {
    Linear,
    /// `sign(y) log10(1 + |y| / linthresh)`
    SymLog { linthresh: f64 },
}

impl YScale {
    pub fn forward(self, y: f64) -> f64 {
        match self {
            YScale::Linear => y,
            YScale::SymLog { linthresh } => y.signum() * (1.0 + y.abs() / linthresh).log10(),
        }
    }

    pub fn inverse(self, v: f64) -> f64 {
        match self {
            YScale::Linear => v,
            YScale::SymLog { linthresh } => v.signum() * (10f64.powf(v.abs()) - 1.0) * linthresh,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub y_scale: YScale,
    pub series: Vec<Series>,
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 160.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

fn nice_ticks(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if !(hi > lo) {
        return vec![lo];
    }
    let raw = (hi - lo) / n as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|i| i as f64 * step).collect()
}

fn symlog_ticks(lo: f64, hi: f64, c: f64) -> Vec<f64> {
    let mut ticks = vec![];
    if lo <= 0.0 && hi >= 0.0 {
        ticks.push(0.0);
    }
    for k in -12..=12 {
        let v = c * 10f64.powi(k);
        for t in [v, -v] {
            if t >= lo && t <= hi && t.abs() >= c {
                ticks.push(t);
            }
        }
    }
    ticks.sort_by(f64::total_cmp);
    ticks
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e4 || v.abs() < 1e-2 {
        format!("{v:.0e}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl Chart {
    pub fn new(title: impl Into<String>, x_label: impl Into<String>, y_label: impl Into<String>) -> Self {
        Chart { title: title.into(), x_label: x_label.into(), y_label: y_label.into(), y_scale: YScale::Linear, series: vec![] }
    }

    pub fn y_scale(mut self, scale: YScale) -> Self {
        self.y_scale = scale;
        self
    }

    pub fn with(mut self, s: Series) -> Self {
        self.series.push(s);
        self
    }

    pub fn to_svg(&self) -> String {
        let finite = || self.series.iter().flat_map(|s| s.points.iter()).filter(|(x, y)| x.is_finite() && y.is_finite());
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in finite() {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if !x0.is_finite() {
            (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
        }
        if x1 == x0 {
            x1 = x0 + 1.0;
        }
        if y1 == y0 {
            y0 -= 0.5 * y0.abs().max(1e-12);
            y1 += 0.5 * y1.abs().max(1e-12);
        }
        let (v0, v1) = (self.y_scale.forward(y0), self.y_scale.forward(y1));
        let pw = W - LEFT - RIGHT;
        let ph = H - TOP - BOTTOM;
        let px = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
        let py = |y: f64| TOP + ph - (self.y_scale.forward(y) - v0) / (v1 - v0) * ph;

        let mut svg = String::new();
        let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#);
        let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(svg, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, LEFT + pw / 2.0, escape(&self.title));
        let _ = writeln!(svg, r##"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>"##);

        for t in nice_ticks(x0, x1, 6) {
            let x = px(t);
            let _ = writeln!(svg, r##"<line x1="{x:.2}" y1="{}" x2="{x:.2}" y2="{}" stroke="#444"/>"##, TOP + ph, TOP + ph + 4.0);
            let _ = writeln!(svg, r#"<text x="{x:.2}" y="{}" text-anchor="middle">{}</text>"#, TOP + ph + 16.0, fmt_tick(t));
        }
        let yticks = match self.y_scale {
            YScale::Linear => nice_ticks(y0, y1, 6),
            YScale::SymLog { linthresh } => symlog_ticks(y0, y1, linthresh),
        };
        for t in yticks {
            let y = py(t);
            let _ = writeln!(svg, r##"<line x1="{}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="#ddd"/>"##, LEFT, LEFT + pw);
            let _ = writeln!(svg, r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#, LEFT - 6.0, y + 4.0, fmt_tick(t));
        }
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, LEFT + pw / 2.0, H - 12.0, escape(&self.x_label));
        let _ = writeln!(
            svg,
            r#"<text x="16" y="{0}" text-anchor="middle" transform="rotate(-90 16 {0})">{1}</text>"#,
            TOP + ph / 2.0,
            escape(&self.y_label)
        );

        for (i, s) in self.series.iter().enumerate() {
            let color = COLORS[i % COLORS.len()];
            let mut segments: Vec<Vec<String>> = vec![vec![]];
            for &(x, y) in &s.points {
                if x.is_finite() && y.is_finite() {
                    segments.last_mut().expect("non-empty").push(format!("{:.2},{:.2}", px(x), py(y)));
                } else if !segments.last().expect("non-empty").is_empty() {
                    segments.push(vec![]);
                }
            }
            for seg in segments.iter().filter(|s| !s.is_empty()) {
                let _ = writeln!(svg, r#"<polyline fill="none" stroke="{color}" stroke-width="1.6" points="{}"/>"#, seg.join(" "));
            }
            let ly = TOP + 10.0 + 16.0 * i as f64;
            let lx = LEFT + pw + 12.0;
            let _ = writeln!(svg, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, lx + 18.0);
            let _ = writeln!(svg, r#"<text x="{}" y="{}">{}</text>"#, lx + 24.0, ly + 4.0, escape(&s.label));
        }
        svg.push_str("</svg>\n");
        svg
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_svg()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symlog_round_trip() {
        let s = YScale::SymLog { linthresh: 1e-3 };
        for y in [-5.0, -1e-3, 0.0, 2e-4, 0.7, 1e4] {
            assert!((s.inverse(s.forward(y)) - y).abs() <= 1e-12 * y.abs().max(1e-3));
        }
        assert_eq!(s.forward(0.0), 0.0);
        assert!(s.forward(10.0) > s.forward(1.0));
    }

    #[test]
    fn renders_series_and_breaks_on_nan() {
        let chart = Chart::new("W1 <test>", "step", "W1")
            .y_scale(YScale::SymLog { linthresh: 0.01 })
            .with(Series::new("A", vec![(0.0, 1.5), (1.0, f64::NAN), (2.0, 0.05), (3.0, 0.04)]))
            .with(Series::new("B", vec![(0.0, 1.4), (3.0, 0.03)]));
        let svg = chart.to_svg();
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 3);
        assert!(svg.contains("W1 &lt;test&gt;"));
        assert!(!svg.contains("NaN"));
    }

    #[test]
    fn empty_chart_still_renders() {
        let svg = Chart::new("empty", "x", "y").to_svg();
        assert!(svg.contains("</svg>"));
    }

    #[test]
    fn tick_helpers() {
        assert_eq!(nice_ticks(0.0, 10.0, 5), vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0]);
        assert_eq!(symlog_ticks(0.0, 1.0, 0.01), vec![0.0, 0.01, 0.1, 1.0]);
        assert_eq!(fmt_tick(0.25), "0.25");
        assert_eq!(fmt_tick(50000.0), "5e4");
    }
}
