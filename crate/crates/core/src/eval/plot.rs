//! Embedding outputs: `embedding.csv` (x, y, class) and a self-contained
//! SVG scatter plot.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{atomic_write, Tensor};

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
];

fn check_points(points: &Tensor, labels: &[usize]) -> Result<usize> {
    if points.rank() != 2 || points.shape()[1] != 2 {
        return Err(Error::InvalidShape(format!(
            "embedding must be [N, 2], got {:?}",
            points.shape()
        )));
    }
    let n = points.shape()[0];
    if labels.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {} points",
            labels.len(),
            n
        )));
    }
    Ok(n)
}

pub fn write_embedding_csv(points: &Tensor, labels: &[usize], path: &Path) -> Result<()> {
    let n = check_points(points, labels)?;
    let mut out = String::from("x,y,class\n");
    for i in 0..n {
        out.push_str(&format!(
            "{},{},{}\n",
            points.data()[2 * i],
            points.data()[2 * i + 1],
            labels[i]
        ));
    }
    atomic_write(path, out.as_bytes())
}

pub fn write_embedding_svg(points: &Tensor, labels: &[usize], path: &Path) -> Result<()> {
    let n = check_points(points, labels)?;
    let (size, margin, r) = (600.0f64, 40.0f64, 3.0f64);

    let mut min_x = f64::INFINITY;
    let mut max_x = f64::NEG_INFINITY;
    let mut min_y = f64::INFINITY;
    let mut max_y = f64::NEG_INFINITY;
    for pair in points.data().chunks_exact(2) {
        min_x = min_x.min(pair[0] as f64);
        max_x = max_x.max(pair[0] as f64);
        min_y = min_y.min(pair[1] as f64);
        max_y = max_y.max(pair[1] as f64);
    }
    let span_x = (max_x - min_x).max(1e-9);
    let span_y = (max_y - min_y).max(1e-9);
    let scale = (size - 2.0 * margin) / span_x.max(span_y);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{0}\" viewBox=\"0 0 {0} {0}\">\n",
        size
    ));
    svg.push_str(&format!(
        "<rect width=\"{0}\" height=\"{0}\" fill=\"white\" stroke=\"#cccccc\"/>\n",
        size
    ));
    for i in 0..n {
        let x = margin + (points.data()[2 * i] as f64 - min_x) * scale;
        // SVG y axis points down
        let y = size - margin - (points.data()[2 * i + 1] as f64 - min_y) * scale;
        let color = PALETTE[labels[i] % PALETTE.len()];
        svg.push_str(&format!(
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"{}\" fill=\"{}\" fill-opacity=\"0.7\"/>\n",
            x, y, r, color
        ));
    }
    svg.push_str("</svg>\n");
    atomic_write(path, svg.as_bytes())
}
