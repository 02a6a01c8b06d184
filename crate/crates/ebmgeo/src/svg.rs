//! Hand-written SVG for the two figure types: geodesics over a filled
//! contour background, and step-size curves.

use std::fmt::Write;

use contour::ContourBuilder;
use ebmgeo_core::geodesic::GeodesicPath;

use crate::error::{PipelineError, Result};

const PANEL: f64 = 320.0;
const MARGIN: f64 = 28.0;
const PALETTE: [&str; 8] = ["#d62728", "#1f77b4", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

/// Scalar field sampled on a square grid, row-major with x varying fastest.
pub struct Field {
    pub values: Vec<f64>,
    pub n: usize,
    pub lo: f64,
    pub hi: f64,
}

impl Field {
    pub fn sample(n: usize, lo: f64, hi: f64, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        let step = (hi - lo) / (n - 1) as f64;
        let mut values = Vec::with_capacity(n * n);
        for j in 0..n {
            for i in 0..n {
                values.push(f(lo + i as f64 * step, lo + j as f64 * step));
            }
        }
        Field { values, n, lo, hi }
    }
}

pub struct Panel {
    pub title: String,
    pub paths: Vec<GeodesicPath>,
}

struct Frame {
    x0: f64,
    y0: f64,
    lo: f64,
    hi: f64,
}

impl Frame {
    fn map(&self, x: f64, y: f64) -> (f64, f64) {
        let s = PANEL / (self.hi - self.lo);
        (self.x0 + (x - self.lo) * s, self.y0 + PANEL - (y - self.lo) * s)
    }
}

fn ramp(u: f64) -> String {
    // Dark blue where the density is high, fading to white.
    let u = u.clamp(0.0, 1.0);
    let c = |a: f64, b: f64| (a + (b - a) * u).round() as u8;
    format!("#{:02x}{:02x}{:02x}", c(8.0, 255.0), c(48.0, 255.0), c(107.0, 255.0))
}

/// Band edges: evenly spaced from the field minimum up to `span` above it,
/// with one last band taking everything higher.
fn thresholds(field: &Field, bands: usize, span: f64) -> Vec<f64> {
    let min = field.values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = field.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let top = (min + span).min(max);
    let mut t: Vec<f64> = (0..=bands).map(|k| min + (top - min) * k as f64 / bands as f64).collect();
    if max > top {
        t.push(max + 1.0);
    } else if let Some(last) = t.last_mut() {
        *last = max + 1.0;
    }
    t.dedup();
    t
}

/// One panel per entry, side by side, each over the same iso-band background.
pub fn geodesic_panels(field: &Field, bands: usize, panels: &[Panel]) -> Result<String> {
    let step = (field.hi - field.lo) / (field.n - 1) as f64;
    let builder = ContourBuilder::new(field.n, field.n, true)
        .x_origin(field.lo)
        .y_origin(field.lo)
        .x_step(step)
        .y_step(step);
    let edges = thresholds(field, bands, 40.0);
    let iso = builder
        .isobands(&field.values, &edges)
        .map_err(|e| PipelineError::format("fig1.svg", format!("iso-bands: {e:?}")))?;

    let width = MARGIN + panels.len() as f64 * (PANEL + MARGIN);
    let height = PANEL + 2.0 * MARGIN;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (pi, panel) in panels.iter().enumerate() {
        let frame = Frame {
            x0: MARGIN + pi as f64 * (PANEL + MARGIN),
            y0: MARGIN,
            lo: field.lo,
            hi: field.hi,
        };
        let _ = writeln!(s, r#"<g class="panel" data-metric="{}">"#, escape(&panel.title));
        let _ = writeln!(s, r#"<clipPath id="clip{pi}"><rect x="{:.2}" y="{:.2}" width="{PANEL}" height="{PANEL}"/></clipPath>"#, frame.x0, frame.y0);
        let _ = writeln!(s, r#"<g clip-path="url(#clip{pi})">"#);
        for (bi, band) in iso.iter().enumerate() {
            let mut d = String::new();
            for poly in band.geometry() {
                for ring in std::iter::once(poly.exterior()).chain(poly.interiors()) {
                    for (k, c) in ring.coords().enumerate() {
                        let (x, y) = frame.map(c.x, c.y);
                        let _ = write!(d, "{}{x:.2} {y:.2}", if k == 0 { "M" } else { "L" });
                    }
                    d.push('Z');
                }
            }
            if !d.is_empty() {
                let fill = ramp(bi as f64 / (iso.len().max(2) - 1) as f64);
                let _ = writeln!(s, r#"<path class="band" fill="{fill}" fill-rule="evenodd" stroke="none" d="{d}"/>"#);
            }
        }
        for (k, path) in panel.paths.iter().enumerate() {
            let _ = writeln!(s, r#"<path class="geodesic" fill="none" stroke="{}" stroke-width="1.5" d="{}"/>"#, PALETTE[k % PALETTE.len()], polyline(&frame, path));
        }
        let _ = writeln!(s, "</g>");
        let _ = writeln!(s, r#"<rect x="{:.2}" y="{:.2}" width="{PANEL}" height="{PANEL}" fill="none" stroke="black"/>"#, frame.x0, frame.y0);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#, frame.x0 + PANEL / 2.0, MARGIN - 8.0, escape(&panel.title));
        let _ = writeln!(s, "</g>");
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn polyline(frame: &Frame, path: &GeodesicPath) -> String {
    let mut d = String::new();
    for k in 0..path.len() {
        let p = path.point(k);
        let (x, y) = frame.map(p[0], p[1]);
        let _ = write!(d, "{}{x:.2} {y:.2}", if k == 0 { "M" } else { " L" });
    }
    d
}

/// Step-size curves, one `<path>` per metric with one vertex per step.
pub fn step_size_curves(curves: &[(String, Vec<f64>)]) -> String {
    let (w, h) = (560.0, 340.0);
    let (left, right, top, bottom) = (56.0, 130.0, 20.0, 40.0);
    let steps = curves.iter().map(|(_, c)| c.len()).max().unwrap_or(1).max(2);
    let ymax = curves.iter().flat_map(|(_, c)| c.iter().cloned()).fold(0.0, f64::max).max(1e-12) * 1.05;
    let px = |k: usize| left + (w - left - right) * k as f64 / (steps - 1) as f64;
    let py = |v: f64| top + (h - top - bottom) * (1.0 - v / ymax);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<path class="axes" fill="none" stroke="black" d="M{left} {top} L{left} {:.2} L{:.2} {:.2}"/>"#, h - bottom, w - right, h - bottom);
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="12" text-anchor="middle">step</text>"#, (left + w - right) / 2.0, h - 10.0);
    let _ = writeln!(s, r#"<text x="14" y="{:.2}" font-family="sans-serif" font-size="12" transform="rotate(-90 14 {:.2})" text-anchor="middle">‖Δx‖</text>"#, h / 2.0, h / 2.0);
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="10" text-anchor="end">{ymax:.3}</text>"#, left - 4.0, top + 4.0);
    for (i, (name, sizes)) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut d = String::new();
        for (k, &v) in sizes.iter().enumerate() {
            let _ = write!(d, "{}{:.2} {:.2}", if k == 0 { "M" } else { " L" }, px(k), py(v));
        }
        let _ = writeln!(s, r#"<path class="curve" data-metric="{}" fill="none" stroke="{color}" stroke-width="1.5" d="{d}"/>"#, escape(name));
        let ly = top + 16.0 * i as f64 + 8.0;
        let _ = writeln!(s, r#"<line x1="{:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/>"#, w - right + 10.0, w - right + 30.0);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="12">{}</text>"#, w - right + 36.0, ly + 4.0, escape(name));
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}
