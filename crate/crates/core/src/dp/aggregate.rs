use rand_distr::{Distribution, StandardNormal};

use super::{DpError, SparseSignVec};
use crate::rng::Rng;

/// Coordinatewise vote sum of the compressed vectors plus i.i.d. `N(0, σ²)`
/// noise. With `σ = 0` no noise is drawn.
pub fn dp_sum_aggregate(dim: usize, vectors: &[SparseSignVec], sigma: f64, rng: &mut Rng) -> Result<Vec<f64>, DpError> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(DpError::InvalidArgument(format!(
            "noise scale must be non-negative, got {sigma}"
        )));
    }
    let mut sum = vec![0.0; dim];
    for (t, v) in vectors.iter().enumerate() {
        if v.dim() != dim {
            return Err(DpError::DimensionMismatch {
                index: t,
                expected: dim,
                found: v.dim(),
            });
        }
        for &(i, s) in v.entries() {
            sum[i] += f64::from(s);
        }
    }
    if sigma > 0.0 {
        for x in &mut sum {
            let z: f64 = StandardNormal.sample(rng);
            *x += sigma * z;
        }
    }
    Ok(sum)
}

/// Keeps the sign of every coordinate whose magnitude reaches `β·N`
/// (inclusive) and zeroes the rest.
pub fn threshold_votes(noisy_sum: &[f64], beta: f64, n_teachers: usize) -> Vec<i8> {
    let cut = beta * n_teachers as f64;
    noisy_sum
        .iter()
        .map(|&v| {
            if v.abs() >= cut {
                if v > 0.0 {
                    1
                } else if v < 0.0 {
                    -1
                } else {
                    0
                }
            } else {
                0
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    #[test]
    fn exact_vote_count_without_noise() {
        let vs = vec![
            SparseSignVec::new(2, vec![(0, 1)]).unwrap(),
            SparseSignVec::new(2, vec![(0, 1)]).unwrap(),
            SparseSignVec::new(2, vec![(1, -1)]).unwrap(),
        ];
        assert_eq!(
            dp_sum_aggregate(2, &vs, 0.0, &mut substream(0, &[])).unwrap(),
            vec![2.0, -1.0]
        );
        assert_eq!(
            dp_sum_aggregate(4, &[], 0.0, &mut substream(0, &[])).unwrap(),
            vec![0.0; 4]
        );
    }

    #[test]
    fn mixed_dimensions_are_rejected() {
        let vs = vec![
            SparseSignVec::new(2, vec![(0, 1)]).unwrap(),
            SparseSignVec::new(3, vec![(0, 1)]).unwrap(),
        ];
        assert!(matches!(
            dp_sum_aggregate(2, &vs, 0.0, &mut substream(0, &[])),
            Err(DpError::DimensionMismatch { index: 1, .. })
        ));
    }

    #[test]
    fn huge_noise_averages_out() {
        let sigma = 1000.0;
        let n = 10_000;
        let mut rng = substream(5, &[]);
        let mut mean = [0.0; 3];
        for _ in 0..n {
            let s = dp_sum_aggregate(3, &[], sigma, &mut rng).unwrap();
            for (m, v) in mean.iter_mut().zip(s) {
                *m += v / n as f64;
            }
        }
        for m in mean {
            assert!(m.abs() < 3.0 * sigma / 100.0, "{m}");
        }
    }

    #[test]
    fn threshold_examples() {
        assert_eq!(threshold_votes(&[8.0], 0.7, 10), vec![1]);
        assert_eq!(threshold_votes(&[-6.0], 0.7, 10), vec![0]);
        assert_eq!(threshold_votes(&[-8.5, 0.0], 0.7, 10), vec![-1, 0]);
        // boundary is inclusive
        assert_eq!(threshold_votes(&[-7.0, 7.0], 0.7, 10), vec![-1, 1]);
    }
}
