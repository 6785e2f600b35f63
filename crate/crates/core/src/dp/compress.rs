use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::DpError;
use crate::rng::Rng;

/// A `k`-sparse vector with entries in {−1, +1}; unlisted coordinates are 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SparseSignVec {
    dim: usize,
    entries: Vec<(usize, i8)>,
}

impl SparseSignVec {
    /// Validates ordering, bounds and sign values.
    pub fn new(dim: usize, entries: Vec<(usize, i8)>) -> Result<Self, DpError> {
        if dim == 0 {
            return Err(DpError::InvalidArgument("dimension must be positive".into()));
        }
        for w in entries.windows(2) {
            if w[0].0 >= w[1].0 {
                return Err(DpError::InvalidArgument("indices must be strictly increasing".into()));
            }
        }
        if let Some(&(i, s)) = entries.iter().find(|(i, s)| *i >= dim || (*s != 1 && *s != -1)) {
            return Err(DpError::InvalidArgument(format!(
                "entry ({i}, {s}) is out of range for dimension {dim}"
            )));
        }
        Ok(Self { dim, entries })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn k(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[(usize, i8)] {
        &self.entries
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for &(i, s) in &self.entries {
            v[i] = f64::from(s);
        }
        v
    }
}

/// How kept coordinates are mapped to ±1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SignMode {
    /// `+1` with probability `(1 + ĝ)/2`, so the expected sign equals the
    /// normalized coordinate `ĝ`.
    #[default]
    Stochastic,
    /// Plain sign; zero maps to `+1`.
    Deterministic,
}

/// Clips `g` to L2 norm `clip_norm`, keeps the `k` largest magnitudes (ties
/// to the lowest index) and quantizes each kept coordinate to a sign.
pub fn topk_sign_compress(
    g: &[f64],
    k: usize,
    clip_norm: f64,
    mode: SignMode,
    rng: &mut Rng,
) -> Result<SparseSignVec, DpError> {
    if g.is_empty() {
        return Err(DpError::InvalidArgument("empty gradient".into()));
    }
    if k > g.len() {
        return Err(DpError::TopKTooLarge { k, dim: g.len() });
    }
    if !(clip_norm > 0.0 && clip_norm.is_finite()) {
        return Err(DpError::InvalidArgument(format!(
            "clip norm must be positive, got {clip_norm}"
        )));
    }
    if g.iter().any(|v| !v.is_finite()) {
        return Err(DpError::InvalidArgument("non-finite gradient".into()));
    }
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    // After clipping every |coordinate| ≤ clip_norm, so dividing by the clip
    // norm lands in [−1, 1].
    let factor = if norm > clip_norm { clip_norm / norm } else { 1.0 };

    let mut order: Vec<usize> = (0..g.len()).collect();
    let by_magnitude = |a: &usize, b: &usize| g[*b].abs().total_cmp(&g[*a].abs()).then(a.cmp(b));
    if k < g.len() {
        order.select_nth_unstable_by(k, by_magnitude);
    }
    let mut kept = order[..k].to_vec();
    kept.sort_unstable();

    let entries = kept
        .into_iter()
        .map(|i| {
            let ghat = (g[i] * factor / clip_norm).clamp(-1.0, 1.0);
            let sign = match mode {
                SignMode::Deterministic => {
                    if ghat < 0.0 {
                        -1
                    } else {
                        1
                    }
                }
                SignMode::Stochastic => {
                    let u: f64 = rng.random();
                    if u < (1.0 + ghat) / 2.0 {
                        1
                    } else {
                        -1
                    }
                }
            };
            (i, sign)
        })
        .collect();
    Ok(SparseSignVec { dim: g.len(), entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    #[test]
    fn unique_top_magnitude_is_kept() {
        let v = topk_sign_compress(
            &[0.5, -2.0, 0.1],
            1,
            1.0,
            SignMode::Deterministic,
            &mut substream(0, &[]),
        )
        .unwrap();
        assert_eq!(v.entries(), &[(1, -1)]);
        assert_eq!(v.dim(), 3);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let v = topk_sign_compress(
            &[1.0, -1.0, 1.0, 0.5],
            2,
            1.0,
            SignMode::Deterministic,
            &mut substream(0, &[]),
        )
        .unwrap();
        assert_eq!(v.entries(), &[(0, 1), (1, -1)]);
    }

    #[test]
    fn zero_vector_keeps_lowest_indices() {
        let v = topk_sign_compress(&[0.0; 6], 3, 1.0, SignMode::Stochastic, &mut substream(3, &[])).unwrap();
        let idx: Vec<usize> = v.entries().iter().map(|e| e.0).collect();
        assert_eq!(idx, vec![0, 1, 2]);
    }

    #[test]
    fn zero_vector_signs_are_fair_coins() {
        let mut rng = substream(11, &[]);
        let n = 10_000;
        let mut sum = 0i64;
        for _ in 0..n {
            let v = topk_sign_compress(&[0.0; 2], 1, 1.0, SignMode::Stochastic, &mut rng).unwrap();
            sum += i64::from(v.entries()[0].1);
        }
        // mean 0, sd of the mean 1/√n
        assert!((sum as f64 / n as f64).abs() < 3.0 / (n as f64).sqrt());
    }

    #[test]
    fn k_larger_than_dim_is_rejected() {
        assert!(matches!(
            topk_sign_compress(&[1.0, 2.0], 3, 1.0, SignMode::Deterministic, &mut substream(0, &[])),
            Err(DpError::TopKTooLarge { k: 3, dim: 2 })
        ));
        assert!(topk_sign_compress(&[1.0], 1, 0.0, SignMode::Deterministic, &mut substream(0, &[])).is_err());
    }

    #[test]
    fn sparse_sign_vec_validation() {
        assert!(SparseSignVec::new(3, vec![(0, 1), (2, -1)]).is_ok());
        assert!(SparseSignVec::new(3, vec![(2, 1), (0, -1)]).is_err());
        assert!(SparseSignVec::new(3, vec![(3, 1)]).is_err());
        assert!(SparseSignVec::new(3, vec![(1, 0)]).is_err());
    }
}
