//! Built-in generators for runs without downloaded benchmarks.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use super::{DataError, ImageShape, LabeledDataset};
use crate::rng::{domain, substream};
use crate::tensor::Tensor;

/// Two interleaved half circles, rescaled to `[0, 1]²`. Balanced labels.
pub fn two_moons(n: usize, noise: f64, seed: u64) -> Result<LabeledDataset, DataError> {
    if n < 2 {
        return Err(DataError::Invalid("two_moons needs n >= 2".into()));
    }
    let mut rng = substream(seed, &[domain::DATASET, 1]);
    let jitter = Normal::new(0.0, noise.max(0.0)).map_err(|e| DataError::Invalid(e.to_string()))?;
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = i % 2;
        let t = rng.random::<f64>() * PI;
        let (x0, x1) = if y == 0 {
            (t.cos(), t.sin())
        } else {
            (1.0 - t.cos(), 0.5 - t.sin())
        };
        // raw range is about [-1, 2] × [-0.5, 1]
        let a = ((x0 + jitter.sample(&mut rng) + 1.25) / 3.5).clamp(0.0, 1.0);
        let b = ((x1 + jitter.sample(&mut rng) + 0.75) / 2.0).clamp(0.0, 1.0);
        data.extend([a, b]);
        labels.push(y);
    }
    LabeledDataset::new(Tensor::new(vec![n, 2], data)?, labels, 2, "two_moons")
}

/// Isotropic Gaussian clusters around centres drawn in `[0.2, 0.8]^dim`,
/// clamped to `[0, 1]`. Labels cycle through the classes.
pub fn gaussian_blobs(
    n: usize,
    classes: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> Result<LabeledDataset, DataError> {
    if n == 0 || classes == 0 || dim == 0 {
        return Err(DataError::Invalid("gaussian_blobs needs n, classes, dim >= 1".into()));
    }
    let mut rng = substream(seed, &[domain::DATASET, 2]);
    let centres: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..dim).map(|_| rng.random_range(0.2..0.8)).collect())
        .collect();
    let normal = Normal::new(0.0, spread.max(0.0)).map_err(|e| DataError::Invalid(e.to_string()))?;
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = i % classes;
        data.extend(centres[y].iter().map(|c| (c + normal.sample(&mut rng)).clamp(0.0, 1.0)));
        labels.push(y);
    }
    LabeledDataset::new(Tensor::new(vec![n, dim], data)?, labels, classes, "gaussian_blobs")
}

type Stroke = &'static [(f64, f64)];

fn ellipse(cx: f64, cy: f64, rx: f64, ry: f64, from: f64, to: f64, steps: usize) -> Vec<(f64, f64)> {
    (0..=steps)
        .map(|s| {
            let t = from + (to - from) * s as f64 / steps as f64;
            (cx + rx * t.cos(), cy + ry * t.sin())
        })
        .collect()
}

/// Polylines in unit coordinates (x right, y down) sketching each digit.
fn digit_strokes(d: usize) -> Vec<Vec<(f64, f64)>> {
    const ONE: Stroke = &[(0.35, 0.27), (0.55, 0.12), (0.55, 0.88)];
    const TWO: Stroke = &[
        (0.26, 0.30),
        (0.36, 0.16),
        (0.55, 0.12),
        (0.71, 0.22),
        (0.71, 0.38),
        (0.55, 0.56),
        (0.26, 0.88),
        (0.78, 0.88),
    ];
    const THREE: Stroke = &[
        (0.26, 0.18),
        (0.50, 0.11),
        (0.70, 0.22),
        (0.67, 0.40),
        (0.45, 0.50),
        (0.70, 0.60),
        (0.72, 0.78),
        (0.50, 0.90),
        (0.26, 0.82),
    ];
    const FOUR: Stroke = &[(0.62, 0.88), (0.62, 0.12), (0.22, 0.64), (0.80, 0.64)];
    const FIVE: Stroke = &[
        (0.72, 0.12),
        (0.32, 0.12),
        (0.29, 0.47),
        (0.55, 0.42),
        (0.72, 0.55),
        (0.72, 0.76),
        (0.50, 0.90),
        (0.26, 0.83),
    ];
    const SIX: Stroke = &[
        (0.66, 0.12),
        (0.42, 0.28),
        (0.29, 0.58),
        (0.32, 0.82),
        (0.50, 0.90),
        (0.69, 0.79),
        (0.69, 0.60),
        (0.50, 0.50),
        (0.30, 0.60),
    ];
    const SEVEN: Stroke = &[(0.22, 0.12), (0.78, 0.12), (0.44, 0.88)];
    match d {
        0 => vec![ellipse(0.5, 0.5, 0.27, 0.38, 0.0, 2.0 * PI, 20)],
        1 => vec![ONE.to_vec()],
        2 => vec![TWO.to_vec()],
        3 => vec![THREE.to_vec()],
        4 => vec![FOUR.to_vec()],
        5 => vec![FIVE.to_vec()],
        6 => vec![SIX.to_vec()],
        7 => vec![SEVEN.to_vec()],
        8 => vec![
            ellipse(0.5, 0.30, 0.18, 0.17, 0.0, 2.0 * PI, 14),
            ellipse(0.5, 0.68, 0.22, 0.21, 0.0, 2.0 * PI, 16),
        ],
        _ => vec![
            ellipse(0.48, 0.33, 0.21, 0.20, 0.0, 2.0 * PI, 16),
            vec![(0.69, 0.36), (0.60, 0.88)],
        ],
    }
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (qx, qy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - qx).powi(2) + (p.1 - qy).powi(2)).sqrt()
}

/// Procedural handwritten-style digits on a `side × side` grid, values in
/// `[0, 1]`, ten balanced classes in shuffled order. Each sample applies a
/// random affine jitter, per-point wobble, stroke width and pixel noise to a
/// fixed stroke template.
pub fn glyph_digits(n: usize, side: usize, seed: u64) -> Result<LabeledDataset, DataError> {
    if n == 0 || side < 4 {
        return Err(DataError::Invalid("glyph_digits needs n >= 1 and side >= 4".into()));
    }
    let mut rng = substream(seed, &[domain::DATASET, 3]);
    let wobble = Normal::new(0.0, 0.025).expect("valid");
    let pixel_noise = Normal::new(0.0, 0.04).expect("valid");
    let mut labels: Vec<usize> = (0..n).map(|i| i % 10).collect();
    labels.shuffle(&mut rng);
    let pixel = 1.0 / side as f64;
    let mut data = Vec::with_capacity(n * side * side);
    for &y in &labels {
        let angle: f64 = rng.random_range(-0.25..0.25);
        let scale: f64 = rng.random_range(0.8..1.05);
        let shear: f64 = rng.random_range(-0.2..0.2);
        let tx: f64 = rng.random_range(-0.07..0.07);
        let ty: f64 = rng.random_range(-0.07..0.07);
        let width: f64 = rng.random_range(0.05..0.09);
        let (sin, cos) = angle.sin_cos();
        let strokes: Vec<Vec<(f64, f64)>> = digit_strokes(y)
            .into_iter()
            .map(|s| {
                s.into_iter()
                    .map(|(x, yy)| {
                        let (u, v) = (x - 0.5 + wobble.sample(&mut rng), yy - 0.5 + wobble.sample(&mut rng));
                        let u = u + shear * v;
                        let (u, v) = (cos * u - sin * v, sin * u + cos * v);
                        (0.5 + scale * u + tx, 0.5 + scale * v + ty)
                    })
                    .collect()
            })
            .collect();
        for py in 0..side {
            for px in 0..side {
                let p = ((px as f64 + 0.5) * pixel, (py as f64 + 0.5) * pixel);
                let d = strokes
                    .iter()
                    .flat_map(|s| s.windows(2).map(move |w| segment_distance(p, w[0], w[1])))
                    .fold(f64::INFINITY, f64::min);
                let ink = (1.0 - (d - width).max(0.0) / pixel).clamp(0.0, 1.0);
                data.push((ink + pixel_noise.sample(&mut rng)).clamp(0.0, 1.0));
            }
        }
    }
    LabeledDataset::new(Tensor::new(vec![n, side * side], data)?, labels, 10, "glyph_digits")?
        .with_image_shape(ImageShape::gray(side))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moons_in_unit_square_and_balanced() {
        let d = two_moons(200, 0.1, 5).unwrap();
        assert!(d.samples().data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(d.class_counts(), vec![100, 100]);
        assert_eq!(d, two_moons(200, 0.1, 5).unwrap());
    }

    #[test]
    fn blobs_shape() {
        let d = gaussian_blobs(30, 3, 4, 0.05, 1).unwrap();
        assert_eq!((d.len(), d.dim(), d.n_classes()), (30, 4, 3));
    }

    #[test]
    fn glyphs_have_ink_and_differ_by_class() {
        let d = glyph_digits(100, 14, 2).unwrap();
        assert_eq!(d.dim(), 196);
        assert_eq!(d.class_counts(), vec![10; 10]);
        let by = d.indices_by_class();
        let mean = |c: usize| -> Vec<f64> {
            let rows = &by[&c];
            (0..196)
                .map(|j| rows.iter().map(|&i| d.samples().row(i)[j]).sum::<f64>() / rows.len() as f64)
                .collect()
        };
        let (m1, m0) = (mean(1), mean(0));
        let ink1: f64 = m1.iter().sum();
        let ink0: f64 = m0.iter().sum();
        assert!(ink1 > 5.0 && ink0 > ink1, "ink {ink0} {ink1}");
        let dist: f64 = m1.iter().zip(&m0).map(|(a, b)| (a - b).powi(2)).sum();
        assert!(dist > 1.0, "class means too close: {dist}");
    }
}
