//! Scatter figure of test predictions against the noiseless truth, written
//! directly as SVG, plus the CSV of the plotted points.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{self, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const PAD_LEFT: f64 = 64.0;
const PAD_RIGHT: f64 = 16.0;
const PAD_TOP: f64 = 24.0;
const PAD_BOTTOM: f64 = 48.0;
/// Fraction of the data span added on each side of both axes.
pub const AXIS_MARGIN: f64 = 0.05;

const TRUTH_COLOR: &str = "#1f77b4";
const PREDICTION_COLOR: &str = "#d62728";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisRanges {
    pub x: (f64, f64),
    pub y: (f64, f64),
}

fn padded(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let span = hi - lo;
    if span == 0.0 {
        return (lo - 0.5, hi + 0.5);
    }
    (lo - AXIS_MARGIN * span, hi + AXIS_MARGIN * span)
}

/// Axis ranges covering both layers with the margin.
pub fn axis_ranges(xs: &[f64], truth: &[f64], predictions: &[f64]) -> AxisRanges {
    let px = if predictions.is_empty() { &[][..] } else { xs };
    AxisRanges {
        x: padded(xs.iter().chain(px).copied()),
        y: padded(truth.iter().chain(predictions).copied()),
    }
}

fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let raw = (hi - lo) / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-12 * step {
        out.push(if t.abs() < 1e-12 * step { 0.0 } else { t });
        t += step;
    }
    out
}

/// Writes the figure to `svg_path` and the points to `csv_path`
/// (`layer,x,y`, truth rows first). `predictions` may be empty.
pub fn emit_scatter(
    xs: &[f64],
    predictions: &[f64],
    truth: &[f64],
    svg_path: impl AsRef<Path>,
    csv_path: impl AsRef<Path>,
    echo: &str,
) -> Result<AxisRanges> {
    if xs.len() != truth.len() || (!predictions.is_empty() && predictions.len() != xs.len()) {
        return error::shape(format!(
            "scatter needs matching lengths: x {}, truth {}, predictions {}",
            xs.len(),
            truth.len(),
            predictions.len()
        ));
    }
    let ranges = axis_ranges(xs, truth, predictions);
    std::fs::write(svg_path, render_svg(xs, predictions, truth, ranges, echo))?;

    let mut text = String::from(echo);
    text.push_str("layer,x,y\n");
    for (x, y) in xs.iter().zip(truth) {
        let _ = writeln!(text, "truth,{x},{y}");
    }
    for (x, y) in xs.iter().zip(predictions) {
        let _ = writeln!(text, "prediction,{x},{y}");
    }
    std::fs::write(csv_path, text)?;
    Ok(ranges)
}

fn render_svg(xs: &[f64], predictions: &[f64], truth: &[f64], r: AxisRanges, echo: &str) -> String {
    let plot_w = WIDTH - PAD_LEFT - PAD_RIGHT;
    let plot_h = HEIGHT - PAD_TOP - PAD_BOTTOM;
    let sx = |x: f64| PAD_LEFT + (x - r.x.0) / (r.x.1 - r.x.0) * plot_w;
    let sy = |y: f64| PAD_TOP + (r.y.1 - y) / (r.y.1 - r.y.0) * plot_h;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    // "--" is not allowed inside XML comments.
    let _ = writeln!(s, "<!--\n{}-->", echo.replace("--", "- -"));
    let _ = writeln!(
        s,
        r#"<metadata>x_range={} {} y_range={} {}</metadata>"#,
        r.x.0, r.x.1, r.y.0, r.y.1
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{PAD_LEFT}" y="{PAD_TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    );
    for t in ticks(r.x.0, r.x.1) {
        let x = sx(t);
        let y0 = PAD_TOP + plot_h;
        let _ = writeln!(s, r#"<line x1="{x:.2}" y1="{y0}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#, y0 + 4.0);
        let _ = writeln!(s, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, y0 + 16.0, fmt_tick(t));
    }
    for t in ticks(r.y.0, r.y.1) {
        let y = sy(t);
        let _ = writeln!(s, r#"<line x1="{:.2}" y1="{y:.2}" x2="{PAD_LEFT}" y2="{y:.2}" stroke="black"/>"#, PAD_LEFT - 4.0);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, PAD_LEFT - 6.0, y + 4.0, fmt_tick(t));
    }
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">x</text>"#, PAD_LEFT + plot_w / 2.0, HEIGHT - 8.0);
    let _ = writeln!(s, r#"<text x="14" y="{:.2}" text-anchor="middle" transform="rotate(-90 14 {:.2})">y</text>"#, PAD_TOP + plot_h / 2.0, PAD_TOP + plot_h / 2.0);

    for (name, color, ys) in [("truth", TRUTH_COLOR, truth), ("prediction", PREDICTION_COLOR, predictions)] {
        if ys.is_empty() {
            continue;
        }
        let _ = writeln!(s, r#"<g id="{name}" fill="{color}" fill-opacity="0.6">"#);
        for (x, y) in xs.iter().zip(ys) {
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="1.6"/>"#, sx(*x), sy(*y));
        }
        s.push_str("</g>\n");
    }
    let legend = [("truth", TRUTH_COLOR), ("prediction", PREDICTION_COLOR)];
    for (i, (name, color)) in legend.iter().enumerate() {
        if *name == "prediction" && predictions.is_empty() {
            continue;
        }
        let y = PAD_TOP + 12.0 + 14.0 * i as f64;
        let x = PAD_LEFT + 10.0;
        let _ = writeln!(s, r#"<circle cx="{x}" cy="{:.1}" r="4" fill="{color}"/>"#, y - 4.0);
        let _ = writeln!(s, r#"<text x="{}" y="{y:.1}">{name}</text>"#, x + 8.0);
    }
    s.push_str("</svg>\n");
    s
}

fn fmt_tick(t: f64) -> String {
    let s = format!("{t:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.to_string() }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn read_points(path: &Path) -> Vec<(String, f64, f64)> {
        std::fs::read_to_string(path)
            .unwrap()
            .lines()
            .filter(|l| !l.starts_with('#') && !l.starts_with("layer"))
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                (f[0].to_string(), f[1].parse().unwrap(), f[2].parse().unwrap())
            })
            .collect()
    }

    #[test]
    fn csv_has_both_layers_and_ranges_cover_them() {
        let dir = tempfile::tempdir().unwrap();
        let xs: Vec<f64> = (0..50).map(|i| i as f64 / 10.0).collect();
        let truth: Vec<f64> = xs.iter().map(|x| 2.0 * x + 3.0).collect();
        let preds: Vec<f64> = truth.iter().enumerate().map(|(i, t)| t + if i % 2 == 0 { 0.7 } else { -1.3 }).collect();
        let (svg, csv) = (dir.path().join("s.svg"), dir.path().join("s.csv"));
        let ranges = emit_scatter(&xs, &preds, &truth, &svg, &csv, "# task = linear\n").unwrap();
        let pts = read_points(&csv);
        assert_eq!(pts.len(), 2 * xs.len());
        // Recompute the ranges from the CSV.
        let xv: Vec<f64> = pts.iter().map(|p| p.1).collect();
        let yv: Vec<f64> = pts.iter().map(|p| p.2).collect();
        let expect = |v: &[f64]| {
            let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            (lo - 0.05 * (hi - lo), hi + 0.05 * (hi - lo))
        };
        let (ex, ey) = (expect(&xv), expect(&yv));
        assert!((ranges.x.0 - ex.0).abs() < 1e-12 && (ranges.x.1 - ex.1).abs() < 1e-12);
        assert!((ranges.y.0 - ey.0).abs() < 1e-12 && (ranges.y.1 - ey.1).abs() < 1e-12);
        let text = std::fs::read_to_string(&svg).unwrap();
        assert!(text.starts_with("<svg") && text.trim_end().ends_with("</svg>"));
        assert!(text.contains(TRUTH_COLOR) && text.contains(PREDICTION_COLOR));
        assert!(text.contains("task = linear"));
        assert_eq!(text.matches("<circle").count(), 2 * xs.len() + 2);
    }

    #[test]
    fn empty_predictions_give_truth_only() {
        let dir = tempfile::tempdir().unwrap();
        let (svg, csv) = (dir.path().join("s.svg"), dir.path().join("s.csv"));
        emit_scatter(&[0.0, 1.0], &[], &[1.0, 2.0], &svg, &csv, "").unwrap();
        let text = std::fs::read_to_string(&svg).unwrap();
        assert!(text.contains(r#"id="truth""#));
        assert!(!text.contains(r#"id="prediction""#));
        assert_eq!(read_points(&csv).len(), 2);
        assert!(emit_scatter(&[0.0], &[1.0, 2.0], &[1.0], &svg, &csv, "").is_err());
    }

    #[test]
    fn degenerate_span_is_widened() {
        let r = axis_ranges(&[2.0, 2.0], &[1.0, 1.0], &[]);
        assert_eq!(r.x, (1.5, 2.5));
        assert_eq!(r.y, (0.5, 1.5));
        assert_eq!(ticks(0.0, 10.0), vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0]);
    }
}
