//! Static SVG charts: boxplots, line charts and kernel density plots on a
//! fixed 800×500 canvas. Output depends only on the input data.

use std::fmt::Write as _;

use lfpmc_core::evaluation::quantile_sorted;

pub const WIDTH: f64 = 800.0;
pub const HEIGHT: f64 = 500.0;

const LEFT: f64 = 80.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 50.0;
const BOTTOM: f64 = 60.0;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PlotError {
    #[error("nothing to plot: {0}")]
    EmptySeries(String),
}

/// Quartiles, whiskers and outliers of one box.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxStats {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    /// Most extreme observations within 1.5×IQR of the box.
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outliers: Vec<f64>,
}

impl BoxStats {
    pub fn new(values: &[f64]) -> Result<Self, PlotError> {
        let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
        if v.is_empty() {
            return Err(PlotError::EmptySeries("no finite values".into()));
        }
        v.sort_by(f64::total_cmp);
        let q1 = quantile_sorted(&v, 0.25);
        let median = quantile_sorted(&v, 0.5);
        let q3 = quantile_sorted(&v, 0.75);
        let iqr = q3 - q1;
        let (lo, hi) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
        let inside: Vec<f64> = v.iter().copied().filter(|x| *x >= lo && *x <= hi).collect();
        Ok(Self {
            q1,
            median,
            q3,
            whisker_low: inside[0],
            whisker_high: inside[inside.len() - 1],
            outliers: v.into_iter().filter(|x| *x < lo || *x > hi).collect(),
        })
    }
}

/// Maps data values to pixel coordinates along one axis.
#[derive(Debug, Clone, Copy)]
struct Scale {
    lo: f64,
    hi: f64,
    px_lo: f64,
    px_hi: f64,
    log: bool,
}

impl Scale {
    fn new(mut lo: f64, mut hi: f64, px_lo: f64, px_hi: f64, log: bool) -> Self {
        if log {
            lo = lo.max(f64::MIN_POSITIVE).log10();
            hi = hi.max(f64::MIN_POSITIVE).log10();
        }
        if hi - lo < 1e-12 * (1.0 + lo.abs()) {
            lo -= 0.5;
            hi += 0.5;
        } else {
            let pad = 0.05 * (hi - lo);
            lo -= pad;
            hi += pad;
        }
        Self { lo, hi, px_lo, px_hi, log }
    }

    fn map(&self, v: f64) -> f64 {
        let v = if self.log { v.max(f64::MIN_POSITIVE).log10() } else { v };
        self.px_lo + (v - self.lo) / (self.hi - self.lo) * (self.px_hi - self.px_lo)
    }

    /// Evenly spaced tick values in data units.
    fn ticks(&self, count: usize) -> Vec<f64> {
        (0..=count)
            .map(|i| {
                let t = self.lo + (self.hi - self.lo) * i as f64 / count as f64;
                if self.log {
                    10f64.powf(t)
                } else {
                    t
                }
            })
            .collect()
    }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e4 || v.abs() < 1e-2 {
        format!("{v:.2e}")
    } else {
        format!("{v:.2}")
    }
}

struct Canvas {
    body: String,
}

impl Canvas {
    fn new(title: &str) -> Self {
        let mut body = String::new();
        let _ = writeln!(
            body,
            r#"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">
<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>
<text x="{:.1}" y="28" text-anchor="middle" font-size="16">{}</text>"#,
            (LEFT + WIDTH - RIGHT) / 2.0,
            escape(title)
        );
        Self { body }
    }

    fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str) {
        let _ = writeln!(
            self.body,
            r#"<line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" stroke="{stroke}"/>"#
        );
    }

    fn text(&mut self, x: f64, y: f64, anchor: &str, content: &str) {
        let _ = writeln!(
            self.body,
            r#"<text x="{x:.2}" y="{y:.2}" text-anchor="{anchor}">{}</text>"#,
            escape(content)
        );
    }

    fn y_axis(&mut self, scale: &Scale, label: &str) {
        let x = LEFT;
        self.line(x, TOP, x, HEIGHT - BOTTOM, "black");
        for t in scale.ticks(5) {
            let y = scale.map(t);
            self.line(x - 5.0, y, x, y, "black");
            self.text(x - 8.0, y + 4.0, "end", &fmt_tick(t));
        }
        let cy = (TOP + HEIGHT - BOTTOM) / 2.0;
        let _ = writeln!(
            self.body,
            r#"<text x="18" y="{cy:.2}" text-anchor="middle" transform="rotate(-90 18 {cy:.2})">{}</text>"#,
            escape(label)
        );
    }

    fn x_axis(&mut self, scale: Option<&Scale>, label: &str) {
        let y = HEIGHT - BOTTOM;
        self.line(LEFT, y, WIDTH - RIGHT, y, "black");
        if let Some(scale) = scale {
            for t in scale.ticks(5) {
                let x = scale.map(t);
                self.line(x, y, x, y + 5.0, "black");
                self.text(x, y + 18.0, "middle", &fmt_tick(t));
            }
        }
        self.text((LEFT + WIDTH - RIGHT) / 2.0, HEIGHT - 15.0, "middle", label);
    }

    fn legend(&mut self, labels: &[&str]) {
        let x = WIDTH - RIGHT + 15.0;
        for (i, label) in labels.iter().enumerate() {
            let y = TOP + 10.0 + 20.0 * i as f64;
            let _ = writeln!(
                self.body,
                r#"<rect x="{x:.2}" y="{:.2}" width="12" height="12" fill="{}"/>"#,
                y - 10.0,
                PALETTE[i % PALETTE.len()]
            );
            self.text(x + 18.0, y, "start", label);
        }
    }

    fn finish(mut self) -> String {
        self.body.push_str("</svg>\n");
        self.body
    }
}

/// Series names and values.
pub type Series = (String, Vec<f64>);

fn check_nonempty(series: &[Series]) -> Result<(), PlotError> {
    if series.is_empty() {
        return Err(PlotError::EmptySeries("no series".into()));
    }
    if let Some((name, _)) = series.iter().find(|(_, v)| !v.iter().any(|x| x.is_finite())) {
        return Err(PlotError::EmptySeries(format!("series `{name}` has no finite values")));
    }
    Ok(())
}

/// One box per series, left to right in input order, with a legend in the
/// same order. `log_y` plots the value axis on a log scale.
pub fn boxplot(series: &[Series], title: &str, y_label: &str, log_y: bool) -> Result<String, PlotError> {
    check_nonempty(series)?;
    let stats: Vec<BoxStats> = series.iter().map(|(_, v)| BoxStats::new(v)).collect::<Result<_, _>>()?;
    let positive = |x: &f64| !log_y || *x > 0.0;
    let all: Vec<f64> = series
        .iter()
        .flat_map(|(_, v)| v.iter().copied())
        .filter(|x| x.is_finite())
        .filter(positive)
        .collect();
    if all.is_empty() {
        return Err(PlotError::EmptySeries("no positive values for a log axis".into()));
    }
    let lo = all.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = all.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let y = Scale::new(lo, hi, HEIGHT - BOTTOM, TOP, log_y);
    let mut canvas = Canvas::new(title);
    canvas.y_axis(&y, y_label);
    canvas.x_axis(None, "");
    let slot = (WIDTH - RIGHT - LEFT) / series.len() as f64;
    let half = (slot * 0.3).min(40.0);
    for (i, ((name, _), s)) in series.iter().zip(&stats).enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let cx = LEFT + slot * (i as f64 + 0.5);
        let (top, bottom) = (y.map(s.q3), y.map(s.q1));
        let _ = writeln!(
            canvas.body,
            r#"<rect x="{:.2}" y="{top:.2}" width="{:.2}" height="{:.2}" fill="{color}" fill-opacity="0.35" stroke="{color}"/>"#,
            cx - half,
            2.0 * half,
            bottom - top
        );
        let m = y.map(s.median);
        canvas.line(cx - half, m, cx + half, m, "black");
        canvas.line(cx, top, cx, y.map(s.whisker_high), color);
        canvas.line(cx, bottom, cx, y.map(s.whisker_low), color);
        canvas.line(cx - half / 2.0, y.map(s.whisker_high), cx + half / 2.0, y.map(s.whisker_high), color);
        canvas.line(cx - half / 2.0, y.map(s.whisker_low), cx + half / 2.0, y.map(s.whisker_low), color);
        for o in s.outliers.iter().filter(|o| positive(o)) {
            let _ = writeln!(
                canvas.body,
                r#"<circle cx="{cx:.2}" cy="{:.2}" r="3" fill="none" stroke="{color}"/>"#,
                y.map(*o)
            );
        }
        canvas.text(cx, HEIGHT - BOTTOM + 18.0, "middle", name);
    }
    let labels: Vec<&str> = series.iter().map(|(n, _)| n.as_str()).collect();
    canvas.legend(&labels);
    Ok(canvas.finish())
}

/// One polyline per series; `points` are `(x, y)` pairs.
pub fn line_chart(
    series: &[(String, Vec<(f64, f64)>)],
    title: &str,
    x_label: &str,
    y_label: &str,
    log_y: bool,
) -> Result<String, PlotError> {
    if series.is_empty() || series.iter().any(|(_, p)| p.is_empty()) {
        return Err(PlotError::EmptySeries("line chart needs points in every series".into()));
    }
    let pts: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|(_, p)| p.iter().copied())
        .filter(|(x, y)| x.is_finite() && y.is_finite() && (!log_y || *y > 0.0))
        .collect();
    if pts.is_empty() {
        return Err(PlotError::EmptySeries("no plottable points".into()));
    }
    let fold = |f: fn(f64, f64) -> f64, init: f64, pick: fn(&(f64, f64)) -> f64| pts.iter().map(pick).fold(init, f);
    let x = Scale::new(
        fold(f64::min, f64::INFINITY, |p| p.0),
        fold(f64::max, f64::NEG_INFINITY, |p| p.0),
        LEFT,
        WIDTH - RIGHT,
        false,
    );
    let y = Scale::new(
        fold(f64::min, f64::INFINITY, |p| p.1),
        fold(f64::max, f64::NEG_INFINITY, |p| p.1),
        HEIGHT - BOTTOM,
        TOP,
        log_y,
    );
    let mut canvas = Canvas::new(title);
    canvas.y_axis(&y, y_label);
    canvas.x_axis(Some(&x), x_label);
    for (i, (_, points)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = points
            .iter()
            .filter(|(px, py)| px.is_finite() && py.is_finite() && (!log_y || *py > 0.0))
            .map(|(px, py)| format!("{:.2},{:.2}", x.map(*px), y.map(*py)))
            .collect();
        let _ = writeln!(
            canvas.body,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            coords.join(" ")
        );
        for c in &coords {
            let (cx, cy) = c.split_once(',').expect("formatted pair");
            let _ = writeln!(canvas.body, r#"<circle cx="{cx}" cy="{cy}" r="2.5" fill="{color}"/>"#);
        }
    }
    let labels: Vec<&str> = series.iter().map(|(n, _)| n.as_str()).collect();
    canvas.legend(&labels);
    Ok(canvas.finish())
}

/// Gaussian kernel density estimate with Silverman's bandwidth, evaluated on
/// `grid` equally spaced points spanning `[lo, hi]`.
pub fn kernel_density(values: &[f64], lo: f64, hi: f64, grid: usize) -> Vec<(f64, f64)> {
    let v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = if v.len() > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let mut bandwidth = 1.06 * sd * n.powf(-0.2);
    if !(bandwidth > 0.0) {
        bandwidth = 1e-3 * (1.0 + mean.abs());
    }
    let norm = 1.0 / (n * bandwidth * (2.0 * std::f64::consts::PI).sqrt());
    (0..grid)
        .map(|i| {
            let x = lo + (hi - lo) * i as f64 / (grid - 1).max(1) as f64;
            let d: f64 = v.iter().map(|xi| (-0.5 * ((x - xi) / bandwidth).powi(2)).exp()).sum();
            (x, d * norm)
        })
        .collect()
}

/// Overlaid density curves, one per series.
pub fn density_plot(series: &[Series], title: &str, x_label: &str) -> Result<String, PlotError> {
    check_nonempty(series)?;
    let all: Vec<f64> = series.iter().flat_map(|(_, v)| v.iter().copied()).filter(|x| x.is_finite()).collect();
    let lo = all.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = all.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 + lo.abs() };
    let (lo, hi) = (lo - 0.25 * span, hi + 0.25 * span);
    let curves: Vec<(String, Vec<(f64, f64)>)> = series
        .iter()
        .map(|(name, v)| (name.clone(), kernel_density(v, lo, hi, 200)))
        .collect();
    line_chart(&curves, title, x_label, "density", false)
}
