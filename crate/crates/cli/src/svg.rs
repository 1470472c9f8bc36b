//! Static SVG plots written by hand.

use std::fmt::Write as _;

use halddp::posterior::{Dendrogram, DissimilarityMatrix};

const W: f64 = 640.0;
const H: f64 = 360.0;
const MARGIN_L: f64 = 64.0;
const MARGIN_R: f64 = 16.0;
const MARGIN_T: f64 = 32.0;
const MARGIN_B: f64 = 48.0;

pub fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Roughly five round tick positions covering `[lo, hi]`.
fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    if !(hi > lo) {
        return vec![lo];
    }
    let raw = (hi - lo) / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-9 * step {
        out.push(if t.abs() < 1e-12 * step { 0.0 } else { t });
        t += step;
    }
    out
}

fn fmt_tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e5 || v.abs() < 1e-3) {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

/// Plot area with linear axes.
struct Frame {
    out: String,
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn new(title: &str, xlabel: &str, ylabel: &str, x: (f64, f64), mut y: (f64, f64)) -> Self {
        if !(y.1 > y.0) {
            y = (y.0 - 0.5, y.0 + 0.5);
        }
        let x = if x.1 > x.0 { x } else { (x.0 - 0.5, x.0 + 0.5) };
        let mut out = String::new();
        let _ = write!(
            out,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" \
             viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"11\">\n\
             <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
             <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"13\">{}</text>\n",
            W / 2.0,
            escape(title)
        );
        let mut f = Self { out, x, y };
        f.axes(xlabel, ylabel);
        f
    }

    fn px(&self, v: f64) -> f64 {
        MARGIN_L + (v - self.x.0) / (self.x.1 - self.x.0) * (W - MARGIN_L - MARGIN_R)
    }

    fn py(&self, v: f64) -> f64 {
        H - MARGIN_B - (v - self.y.0) / (self.y.1 - self.y.0) * (H - MARGIN_T - MARGIN_B)
    }

    fn axes(&mut self, xlabel: &str, ylabel: &str) {
        let (x0, x1, y0, y1) = (MARGIN_L, W - MARGIN_R, H - MARGIN_B, MARGIN_T);
        let _ = writeln!(
            self.out,
            "<path d=\"M{x0},{y1} L{x0},{y0} L{x1},{y0}\" fill=\"none\" stroke=\"black\"/>"
        );
        for t in ticks(self.y.0, self.y.1) {
            let y = self.py(t);
            let _ = writeln!(
                self.out,
                "<line x1=\"{}\" y1=\"{y:.2}\" x2=\"{x0}\" y2=\"{y:.2}\" stroke=\"black\"/>\
                 <text x=\"{}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>",
                x0 - 4.0,
                x0 - 6.0,
                y + 4.0,
                fmt_tick(t)
            );
        }
        let _ = writeln!(
            self.out,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\
             <text x=\"14\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 14 {})\">{}</text>",
            (x0 + x1) / 2.0,
            H - 10.0,
            escape(xlabel),
            (y0 + y1) / 2.0,
            (y0 + y1) / 2.0,
            escape(ylabel)
        );
    }

    fn x_ticks(&mut self) {
        for t in ticks(self.x.0, self.x.1) {
            let x = self.px(t);
            let y = H - MARGIN_B;
            let _ = writeln!(
                self.out,
                "<line x1=\"{x:.2}\" y1=\"{y}\" x2=\"{x:.2}\" y2=\"{}\" stroke=\"black\"/>\
                 <text x=\"{x:.2}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
                y + 4.0,
                y + 16.0,
                fmt_tick(t)
            );
        }
    }

    fn finish(mut self) -> String {
        self.out.push_str("</svg>\n");
        self.out
    }
}

fn range(values: &[f64]) -> (f64, f64) {
    values
        .iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        })
}

/// Trace plot of one parameter against the stored-sample index.
pub fn trace(title: &str, series: &[f64]) -> String {
    let (lo, hi) = range(series);
    let pad = 0.05 * (hi - lo);
    let mut f = Frame::new(
        title,
        "stored sample",
        "value",
        (1.0, series.len().max(1) as f64),
        (lo - pad, hi + pad),
    );
    f.x_ticks();
    let mut d = String::new();
    for (s, v) in series.iter().enumerate() {
        let _ = write!(
            d,
            "{}{:.2},{:.2}",
            if s == 0 { "M" } else { " L" },
            f.px((s + 1) as f64),
            f.py(*v)
        );
    }
    let _ = writeln!(
        f.out,
        "<path d=\"{d}\" fill=\"none\" stroke=\"#1f4e9c\" stroke-width=\"0.8\"/>"
    );
    f.finish()
}

/// Autocorrelation bars for lags `0..acf.len()`, with approximate 95%
/// white-noise bounds for `n` samples.
pub fn acf(title: &str, acf: &[f64], n: usize) -> String {
    let lo = acf.iter().copied().fold(0.0f64, f64::min).min(-0.1);
    let mut f = Frame::new(
        title,
        "lag",
        "autocorrelation",
        (-0.5, acf.len() as f64 - 0.5),
        (lo, 1.0),
    );
    f.x_ticks();
    let zero = f.py(0.0);
    let half = 0.35 * (f.px(1.0) - f.px(0.0));
    for (lag, &v) in acf.iter().enumerate() {
        if !v.is_finite() {
            continue;
        }
        let (x, y) = (f.px(lag as f64), f.py(v));
        let _ = writeln!(
            f.out,
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"#1f4e9c\"/>",
            x - half,
            y.min(zero),
            2.0 * half,
            (y - zero).abs()
        );
    }
    if n > 1 {
        let bound = 1.96 / (n as f64).sqrt();
        for b in [bound, -bound] {
            let y = f.py(b);
            let _ = writeln!(
                f.out,
                "<line x1=\"{MARGIN_L}\" y1=\"{y:.2}\" x2=\"{}\" y2=\"{y:.2}\" stroke=\"#c0392b\" \
                 stroke-dasharray=\"4 3\"/>",
                W - MARGIN_R
            );
        }
    }
    f.finish()
}

/// Gaussian kernel density on `grid` with Silverman's bandwidth.
fn density(samples: &[f64], grid: &[f64]) -> Vec<f64> {
    let n = samples.len() as f64;
    let m = samples.iter().sum::<f64>() / n;
    let sd = (samples.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt();
    let h = 1.06 * sd * n.powf(-0.2);
    if !(h > 0.0) {
        return vec![0.0; grid.len()];
    }
    grid.iter()
        .map(|g| {
            samples
                .iter()
                .map(|x| (-0.5 * ((g - x) / h).powi(2)).exp())
                .sum::<f64>()
                / (n * h)
        })
        .collect()
}

/// One violin in a [`violin`] plot.
pub struct Violin {
    pub label: String,
    pub samples: Vec<f64>,
    /// Observed value drawn as a red point.
    pub observed: Option<f64>,
}

/// Side-by-side posterior densities, one per label, with the median marked
/// and optional observed values overlaid.
pub fn violin(title: &str, ylabel: &str, violins: &[Violin]) -> String {
    let all: Vec<f64> = violins
        .iter()
        .flat_map(|v| v.samples.iter().copied().chain(v.observed))
        .collect();
    let (lo, hi) = range(&all);
    let (lo, hi) = if lo.is_finite() {
        (lo.min(0.0), hi)
    } else {
        (0.0, 1.0)
    };
    let pad = 0.05 * (hi - lo);
    let k = violins.len().max(1);
    let mut f = Frame::new(title, "", ylabel, (0.0, k as f64), (lo, hi + pad));
    let half = 0.42 * (f.px(1.0) - f.px(0.0));
    let grid: Vec<f64> = (0..=64)
        .map(|g| lo + (hi + pad - lo) * g as f64 / 64.0)
        .collect();
    for (idx, v) in violins.iter().enumerate() {
        let cx = f.px(idx as f64 + 0.5);
        let s_lo = range(&v.samples);
        if !v.samples.is_empty() {
            let dens = density(&v.samples, &grid);
            let peak = dens.iter().copied().fold(0.0, f64::max);
            if peak > 0.0 {
                let pts: Vec<(f64, f64)> = grid
                    .iter()
                    .zip(&dens)
                    .filter(|(g, _)| **g >= s_lo.0 && **g <= s_lo.1)
                    .map(|(g, d)| (f.py(*g), d / peak * half))
                    .collect();
                let mut d = String::new();
                for (i, (y, w)) in pts.iter().enumerate() {
                    let _ = write!(
                        d,
                        "{}{:.2},{:.2}",
                        if i == 0 { "M" } else { " L" },
                        cx - w,
                        y
                    );
                }
                for (y, w) in pts.iter().rev() {
                    let _ = write!(d, " L{:.2},{:.2}", cx + w, y);
                }
                let _ = writeln!(
                    f.out,
                    "<path d=\"{d} Z\" fill=\"#9db4d9\" stroke=\"#1f4e9c\" stroke-width=\"0.8\"/>"
                );
            } else {
                // all samples equal
                let y = f.py(s_lo.0);
                let _ = writeln!(
                    f.out,
                    "<line x1=\"{:.2}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"#1f4e9c\"/>",
                    cx - half,
                    cx + half
                );
            }
            let med = halddp::stats::median(&v.samples);
            let _ = writeln!(
                f.out,
                "<circle cx=\"{cx:.2}\" cy=\"{:.2}\" r=\"2.5\" fill=\"black\"/>",
                f.py(med)
            );
        }
        if let Some(o) = v.observed {
            let _ = writeln!(
                f.out,
                "<circle cx=\"{cx:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"#c0392b\"/>",
                f.py(o)
            );
        }
        let y = H - MARGIN_B + 12.0;
        let _ = writeln!(
            f.out,
            "<text x=\"{cx:.2}\" y=\"{y}\" text-anchor=\"end\" transform=\"rotate(-45 {cx:.2} {y})\">{}</text>",
            escape(&v.label)
        );
    }
    f.finish()
}

/// One group of bars in a [`grouped_intervals`] plot.
pub struct IntervalBar {
    pub value: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Point estimates with interval whiskers, one group per label and one
/// series per entry of `series`.
pub fn grouped_intervals(
    title: &str,
    ylabel: &str,
    labels: &[String],
    series: &[(&str, Vec<IntervalBar>)],
) -> String {
    let all: Vec<f64> = series
        .iter()
        .flat_map(|(_, b)| b.iter().flat_map(|b| [b.value, b.lower, b.upper]))
        .collect();
    let (_, hi) = range(&all);
    let hi = if hi.is_finite() && hi > 0.0 {
        hi * 1.05
    } else {
        1.0
    };
    let mut f = Frame::new(
        title,
        "",
        ylabel,
        (0.0, labels.len().max(1) as f64),
        (0.0, hi),
    );
    let colours = ["#1f4e9c", "#c0392b", "#27ae60", "#8e44ad"];
    let group = f.px(1.0) - f.px(0.0);
    let ns = series.len().max(1) as f64;
    for (s, (name, bars)) in series.iter().enumerate() {
        let colour = colours[s % colours.len()];
        for (g, b) in bars.iter().enumerate() {
            let x = f.px(g as f64) + group * (s as f64 + 0.5 + 0.5) / (ns + 1.0);
            if b.lower.is_finite() && b.upper.is_finite() {
                let _ = writeln!(
                    f.out,
                    "<line x1=\"{x:.2}\" y1=\"{:.2}\" x2=\"{x:.2}\" y2=\"{:.2}\" stroke=\"{colour}\" stroke-width=\"1.5\"/>",
                    f.py(b.lower),
                    f.py(b.upper)
                );
            }
            let _ = writeln!(
                f.out,
                "<circle cx=\"{x:.2}\" cy=\"{:.2}\" r=\"3.5\" fill=\"{colour}\"/>",
                f.py(b.value)
            );
        }
        let ly = MARGIN_T + 4.0 + 14.0 * s as f64;
        let lx = W - MARGIN_R - 120.0;
        let _ = writeln!(
            f.out,
            "<circle cx=\"{lx}\" cy=\"{ly}\" r=\"4\" fill=\"{colour}\"/>\
             <text x=\"{}\" y=\"{}\">{}</text>",
            lx + 8.0,
            ly + 4.0,
            escape(name)
        );
    }
    for (g, label) in labels.iter().enumerate() {
        let cx = f.px(g as f64 + 0.5);
        let _ = writeln!(
            f.out,
            "<text x=\"{cx:.2}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
            H - MARGIN_B + 16.0,
            escape(label)
        );
    }
    f.finish()
}

/// Colour of a dissimilarity in `[0, 1]`: dark blue at 0, white at 1.
fn heat_colour(d: f64) -> String {
    let d = d.clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64| (a + (b - a) * d).round() as u8;
    format!(
        "#{:02x}{:02x}{:02x}",
        lerp(8.0, 255.0),
        lerp(29.0, 255.0),
        lerp(88.0, 255.0)
    )
}

/// Dissimilarity heatmap with rows and columns in dendrogram leaf order and
/// the dendrogram drawn above the columns.
pub fn heatmap(d: &DissimilarityMatrix, tree: &Dendrogram) -> String {
    let n = d.n();
    let order = tree.leaf_order();
    let cell = (560.0 / n.max(1) as f64).clamp(2.0, 24.0);
    let label_w = 70.0;
    let dendro_h = 120.0;
    let x0 = label_w;
    let y0 = 20.0 + dendro_h;
    let size = cell * n as f64;
    let width = x0 + size + 90.0;
    let height = y0 + size + label_w;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" \
         viewBox=\"0 0 {width:.0} {height:.0}\" font-family=\"sans-serif\" font-size=\"{:.0}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>",
        (cell * 0.8).clamp(4.0, 11.0)
    );
    for (r, &i) in order.iter().enumerate() {
        for (c, &j) in order.iter().enumerate() {
            let _ = writeln!(
                out,
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{cell:.2}\" height=\"{cell:.2}\" fill=\"{}\"/>",
                x0 + c as f64 * cell,
                y0 + r as f64 * cell,
                heat_colour(d.get(i, j))
            );
        }
    }
    for (r, &i) in order.iter().enumerate() {
        let y = y0 + (r as f64 + 0.75) * cell;
        let x = x0 + (r as f64 + 0.5) * cell;
        let yb = y0 + size + 4.0;
        let label = escape(&d.labels[i]);
        let _ = writeln!(
            out,
            "<text x=\"{:.2}\" y=\"{y:.2}\" text-anchor=\"end\">{label}</text>\
             <text x=\"{x:.2}\" y=\"{yb:.2}\" text-anchor=\"end\" transform=\"rotate(-90 {x:.2} {yb:.2})\">{label}</text>",
            x0 - 3.0
        );
    }

    // dendrogram: node heights scaled to the tallest merge
    let max_h = tree
        .merges
        .iter()
        .map(|m| m.height)
        .fold(0.0, f64::max)
        .max(1e-12);
    let mut pos = vec![0.0; n + tree.merges.len()];
    let mut node_h = vec![0.0; n + tree.merges.len()];
    for (r, &i) in order.iter().enumerate() {
        pos[i] = x0 + (r as f64 + 0.5) * cell;
    }
    let y_of = |h: f64| y0 - 4.0 - h / max_h * (dendro_h - 10.0);
    for (k, m) in tree.merges.iter().enumerate() {
        let node = n + k;
        pos[node] = 0.5 * (pos[m.left] + pos[m.right]);
        node_h[node] = m.height;
        let y = y_of(m.height);
        let _ = writeln!(
            out,
            "<path d=\"M{:.2},{:.2} L{:.2},{y:.2} L{:.2},{y:.2} L{:.2},{:.2}\" fill=\"none\" stroke=\"black\" stroke-width=\"0.8\"/>",
            pos[m.left],
            y_of(node_h[m.left]),
            pos[m.left],
            pos[m.right],
            pos[m.right],
            y_of(node_h[m.right])
        );
    }

    // colour key
    let kx = x0 + size + 20.0;
    for s in 0..=20 {
        let v = s as f64 / 20.0;
        let _ = writeln!(
            out,
            "<rect x=\"{kx:.2}\" y=\"{:.2}\" width=\"14\" height=\"6\" fill=\"{}\"/>",
            y0 + (20 - s) as f64 * 6.0,
            heat_colour(v)
        );
    }
    let _ = writeln!(
        out,
        "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"10\">1</text>\
         <text x=\"{:.2}\" y=\"{:.2}\" font-size=\"10\">0</text>\
         <text x=\"{kx:.2}\" y=\"{:.2}\" font-size=\"10\">dissimilarity</text>",
        kx + 18.0,
        y0 + 8.0,
        kx + 18.0,
        y0 + 126.0,
        y0 - 6.0
    );
    out.push_str("</svg>\n");
    out
}
