//! Where recovered samples come from.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use super::{l2_distance, AttackError, ReconstructionResult};
use crate::data::ImageShape;
use crate::tensor::Tensor;

/// One recovered sample.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeakageRow {
    pub neuron: usize,
    /// Relative distance to the true batch, when known.
    pub residual: Option<f64>,
    pub nn_distance_secret: f64,
    pub nn_distance_synthetic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeakageReport {
    pub rows: Vec<LeakageRow>,
    pub match_tol: f64,
    /// Share of recovered samples within `match_tol` of a secret sample.
    pub secret_match_rate: f64,
    pub synthetic_match_rate: f64,
    /// Share of recovered samples strictly closer to the synthetic set.
    pub nearest_synthetic_rate: f64,
}

impl LeakageReport {
    /// Columns `neuron, residual, nn_distance_secret, nn_distance_synthetic`.
    pub fn write_csv(&self, path: &Path) -> Result<(), AttackError> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(super) fn nearest_distance(x: &[f64], set: &Tensor) -> f64 {
    (0..set.rows())
        .map(|r| l2_distance(x, set.row(r)))
        .fold(f64::INFINITY, f64::min)
}

/// Nearest-neighbour distances of every recovered sample to both reference
/// sets; a match is a distance at most `match_tol`.
pub fn evaluate_leakage(
    recovered: &ReconstructionResult,
    secret: &Tensor,
    synthetic: &Tensor,
    match_tol: f64,
) -> Result<LeakageReport, AttackError> {
    if secret.rows() == 0 || synthetic.rows() == 0 {
        return Err(AttackError::InvalidArgument("reference sets must be non-empty".into()));
    }
    if secret.cols() != synthetic.cols() || recovered.samples.iter().any(|s| s.len() != secret.cols()) {
        return Err(AttackError::InvalidArgument(
            "recovered and reference dimensions differ".into(),
        ));
    }
    let rows: Vec<LeakageRow> = recovered
        .samples
        .iter()
        .enumerate()
        .map(|(j, s)| LeakageRow {
            neuron: recovered.neurons[j],
            residual: recovered.residuals.get(j).copied(),
            nn_distance_secret: nearest_distance(s, secret),
            nn_distance_synthetic: nearest_distance(s, synthetic),
        })
        .collect();
    let rate = |f: &dyn Fn(&LeakageRow) -> bool| {
        if rows.is_empty() {
            0.0
        } else {
            rows.iter().filter(|r| f(r)).count() as f64 / rows.len() as f64
        }
    };
    Ok(LeakageReport {
        secret_match_rate: rate(&|r| r.nn_distance_secret <= match_tol),
        synthetic_match_rate: rate(&|r| r.nn_distance_synthetic <= match_tol),
        nearest_synthetic_rate: rate(&|r| r.nn_distance_synthetic < r.nn_distance_secret),
        rows,
        match_tol,
    })
}

/// Grayscale SVG of (recovered, reference) image pairs, one pair per row.
/// Pixel values are clamped to `[0, 1]`; only the first channel is drawn.
pub fn gallery_svg(title: &str, pairs: &[(Vec<f64>, Vec<f64>)], shape: ImageShape) -> String {
    let cell = 4.0;
    let (w, h) = (shape.width as f64 * cell, shape.height as f64 * cell);
    let pad = 10.0;
    let width = 2.0 * w + 3.0 * pad;
    let height = 30.0 + pairs.len() as f64 * (h + pad) + pad;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{pad}" y="20" font-family="sans-serif" font-size="12">{}</text>"#,
        title.replace('&', "&amp;").replace('<', "&lt;")
    );
    for (k, (a, b)) in pairs.iter().enumerate() {
        let y0 = 30.0 + k as f64 * (h + pad);
        for (col, img) in [a, b].into_iter().enumerate() {
            let x0 = pad + col as f64 * (w + pad);
            for r in 0..shape.height {
                for c in 0..shape.width {
                    let v = img.get(r * shape.width + c).copied().unwrap_or(0.0);
                    let g = (255.0 * (1.0 - v.clamp(0.0, 1.0))).round() as u8;
                    let _ = writeln!(
                        svg,
                        r#"<rect x="{}" y="{}" width="{cell}" height="{cell}" fill="rgb({g},{g},{g})"/>"#,
                        x0 + c as f64 * cell,
                        y0 + r as f64 * cell
                    );
                }
            }
        }
    }
    svg.push_str("</svg>\n");
    svg
}
