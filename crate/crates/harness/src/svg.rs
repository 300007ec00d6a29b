//! Hand-rolled SVG line charts. No styling dependencies; every coordinate
//! is formatted through one code path so a regenerated plot is byte-equal.

use std::path::Path;

use crate::error::{HarnessError, Result};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const MARGIN_L: f64 = 64.0;
const MARGIN_R: f64 = 160.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 48.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f",
];

/// Two decimal places is plenty for pixel coordinates and keeps the files
/// small and stable.
fn px(v: f64) -> String {
    format!("{v:.2}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn new(label: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Series {
            label: label.into(),
            points,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineChart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

fn ticks(lo: f64, hi: f64, want: usize) -> Vec<f64> {
    let span = hi - lo;
    let raw = span / want.max(1) as f64;
    let mag = 10f64.powf(raw.abs().log10().floor());
    let norm = raw / mag;
    let step = if norm < 1.5 {
        1.0
    } else if norm < 3.0 {
        2.0
    } else if norm < 7.0 {
        5.0
    } else {
        10.0
    } * mag;
    let first = (lo / step).ceil() * step;
    let mut out = Vec::new();
    let mut t = first;
    let mut guard = 0;
    while t <= hi + step * 1e-9 && guard < 64 {
        // Snap near-zero ticks produced by rounding.
        out.push(if t.abs() < step * 1e-9 { 0.0 } else { t });
        t += step;
        guard += 1;
    }
    out
}

impl LineChart {
    pub fn new(
        title: impl Into<String>,
        x_label: impl Into<String>,
        y_label: impl Into<String>,
    ) -> Self {
        LineChart {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            series: Vec::new(),
        }
    }

    pub fn push(&mut self, series: Series) {
        self.series.push(series);
    }

    pub fn render(&self) -> Result<String> {
        if self.series.is_empty() || self.series.iter().all(|s| s.points.is_empty()) {
            return Err(HarnessError::runtime("chart has no points"));
        }
        for s in &self.series {
            for &(x, y) in &s.points {
                if !x.is_finite() || !y.is_finite() {
                    return Err(HarnessError::runtime(format!(
                        "series '{}' holds a non-finite point",
                        s.label
                    )));
                }
            }
        }
        let xs = self.series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
        let ys = self.series.iter().flat_map(|s| s.points.iter().map(|p| p.1));
        let (mut x_lo, mut x_hi) = bounds(xs);
        let (mut y_lo, mut y_hi) = bounds(ys);
        if x_lo == x_hi {
            x_lo -= 0.5;
            x_hi += 0.5;
        }
        if y_lo == y_hi {
            let pad = if y_lo == 0.0 { 0.5 } else { y_lo.abs() * 0.1 };
            y_lo -= pad;
            y_hi += pad;
        }
        // A little headroom so lines stay off the frame.
        let y_pad = (y_hi - y_lo) * 0.05;
        y_lo -= y_pad;
        y_hi += y_pad;

        let plot_w = WIDTH - MARGIN_L - MARGIN_R;
        let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
        let sx = move |x: f64| MARGIN_L + (x - x_lo) / (x_hi - x_lo) * plot_w;
        let sy = move |y: f64| MARGIN_T + plot_h - (y - y_lo) / (y_hi - y_lo) * plot_h;

        let mut out = String::new();
        out.push_str(&format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
             viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"monospace\" font-size=\"12\">\n"
        ));
        out.push_str(&format!(
            "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n"
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"24\" font-size=\"15\" text-anchor=\"middle\">{}</text>\n",
            px(MARGIN_L + plot_w / 2.0),
            escape(&self.title)
        ));
        // Frame.
        out.push_str(&format!(
            "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>\n",
            px(MARGIN_L),
            px(MARGIN_T),
            px(plot_w),
            px(plot_h)
        ));
        for t in ticks(x_lo, x_hi, 6) {
            let x = sx(t);
            out.push_str(&format!(
                "<line x1=\"{x}\" y1=\"{y0}\" x2=\"{x}\" y2=\"{y1}\" stroke=\"black\"/>\n",
                x = px(x),
                y0 = px(MARGIN_T + plot_h),
                y1 = px(MARGIN_T + plot_h + 5.0)
            ));
            out.push_str(&format!(
                "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
                px(x),
                px(MARGIN_T + plot_h + 20.0),
                tick_label(t)
            ));
        }
        for t in ticks(y_lo, y_hi, 6) {
            let y = sy(t);
            out.push_str(&format!(
                "<line x1=\"{x0}\" y1=\"{y}\" x2=\"{x1}\" y2=\"{y}\" stroke=\"black\"/>\n",
                x0 = px(MARGIN_L - 5.0),
                x1 = px(MARGIN_L),
                y = px(y)
            ));
            out.push_str(&format!(
                "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n",
                px(MARGIN_L - 9.0),
                px(y + 4.0),
                tick_label(t)
            ));
        }
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
            px(MARGIN_L + plot_w / 2.0),
            px(HEIGHT - 10.0),
            escape(&self.x_label)
        ));
        out.push_str(&format!(
            "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{}</text>\n",
            px(MARGIN_T + plot_h / 2.0),
            px(MARGIN_T + plot_h / 2.0),
            escape(&self.y_label)
        ));
        for (i, s) in self.series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            if s.points.len() > 1 {
                let pts: Vec<String> = s
                    .points
                    .iter()
                    .map(|&(x, y)| format!("{},{}", px(sx(x)), px(sy(y))))
                    .collect();
                out.push_str(&format!(
                    "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
                    pts.join(" ")
                ));
            }
            for &(x, y) in &s.points {
                out.push_str(&format!(
                    "<circle cx=\"{}\" cy=\"{}\" r=\"2.5\" fill=\"{color}\"/>\n",
                    px(sx(x)),
                    px(sy(y))
                ));
            }
            let ly = MARGIN_T + 14.0 + i as f64 * 18.0;
            out.push_str(&format!(
                "<line x1=\"{x0}\" y1=\"{y}\" x2=\"{x1}\" y2=\"{y}\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
                x0 = px(WIDTH - MARGIN_R + 10.0),
                x1 = px(WIDTH - MARGIN_R + 34.0),
                y = px(ly)
            ));
            out.push_str(&format!(
                "<text x=\"{}\" y=\"{}\">{}</text>\n",
                px(WIDTH - MARGIN_R + 40.0),
                px(ly + 4.0),
                escape(&s.label)
            ));
        }
        out.push_str("</svg>\n");
        Ok(out)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render()?)?;
        Ok(())
    }
}

fn bounds<I: Iterator<Item = f64>>(vals: I) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in vals {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (lo, hi)
}

fn tick_label(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let a = v.abs();
    if a >= 0.001 && a < 100000.0 {
        let s = format!("{v:.4}");
        let trimmed = s.trim_end_matches('0').trim_end_matches('.');
        trimmed.to_string()
    } else {
        format!("{v:e}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
