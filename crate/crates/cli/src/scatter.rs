//! Static SVG scatterplots of 2-D embeddings.

use std::fmt::Write as _;
use std::path::Path;

use epl_core::dataset::LabelVector;
use epl_core::Matrix;

use crate::error::{CliError, Result};

const SIZE: f64 = 600.0;
const MARGIN: f64 = 20.0;
const RADIUS: f64 = 3.0;
pub const UNLABELED_FILL: &str = "#000000";

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

/// Fill for a class id; ids beyond the palette get evenly spaced hues.
pub fn class_color(class: usize) -> String {
    if let Some(c) = PALETTE.get(class) {
        return (*c).to_string();
    }
    let hue = (class as f64 * 137.507_764) % 360.0;
    hsl_to_hex(hue, 0.65, 0.45)
}

fn hsl_to_hex(h: f64, s: f64, l: f64) -> String {
    let c = (1.0 - (2.0 * l - 1.0).abs()) * s;
    let x = c * (1.0 - ((h / 60.0) % 2.0 - 1.0).abs());
    let m = l - c / 2.0;
    let (r, g, b) = match (h / 60.0) as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let byte = |v: f64| ((v + m) * 255.0).round().clamp(0.0, 255.0) as u8;
    format!("#{:02x}{:02x}{:02x}", byte(r), byte(g), byte(b))
}

/// Renders one circle per point. Unlabeled points are black and drawn first
/// so labeled points stay visible on top.
pub fn render_scatter(coords: &Matrix, labels: &LabelVector) -> Result<String> {
    let n = coords.rows();
    if labels.len() != n || coords.cols() != 2 {
        return Err(CliError::config(format!(
            "scatter needs n x 2 coordinates and n labels, got {}x{} and {}",
            n,
            coords.cols(),
            labels.len()
        )));
    }
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for row in coords.iter_rows() {
        for d in 0..2 {
            lo[d] = lo[d].min(row[d]);
            hi[d] = hi[d].max(row[d]);
        }
    }
    let span = (0..2).map(|d| hi[d] - lo[d]).fold(0.0, f64::max);
    let scale = if span > 0.0 { (SIZE - 2.0 * MARGIN) / span } else { 1.0 };
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(svg, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##);
    let order = (0..n)
        .filter(|&i| labels.class(i).is_none())
        .chain((0..n).filter(|&i| labels.class(i).is_some()));
    for i in order {
        let x = MARGIN + (coords.get(i, 0) - lo[0]) * scale;
        // SVG y grows downwards.
        let y = SIZE - MARGIN - (coords.get(i, 1) - lo[1]) * scale;
        let fill = labels
            .class(i)
            .map_or_else(|| UNLABELED_FILL.to_string(), class_color);
        let _ = writeln!(
            svg,
            r#"<circle cx="{x:.3}" cy="{y:.3}" r="{RADIUS}" fill="{fill}"/>"#
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

pub fn emit_scatter(coords: &Matrix, labels: &LabelVector, path: &Path) -> Result<()> {
    let svg = render_scatter(coords, labels)?;
    std::fs::write(path, svg).map_err(|e| CliError::io(path, e))
}
