//! Trap weights for the first dense layer.

use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal};

use super::AttackError;
use crate::nn::{DenseParams, NetworkSpec, ParamSet};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// A crafted first layer.
#[derive(Debug, Clone, PartialEq)]
pub struct TrapWeights {
    pub layer: DenseParams,
    /// Each neuron's bias sits at this quantile of its pre-activation.
    pub bias_percentile: f64,
    /// Standard deviation of the weight entries.
    pub scale: f64,
}

/// Gaussian weight rows with entries of standard deviation `1/√input_dim`.
/// Under inputs with independent coordinates of the given mean and standard
/// deviation, `wᵢᵀx` is normal; each bias is minus its `p`-quantile, so a
/// neuron fires for a `1 − p` share of inputs. `p = 1 − 1/B` leaves about one
/// firing sample per neuron in a batch of `B`.
pub fn trap_weight_init(
    input_dim: usize,
    n_neurons: usize,
    mean: &[f64],
    std: &[f64],
    p: f64,
    rng: &mut Rng,
) -> Result<TrapWeights, AttackError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(AttackError::InvalidArgument(format!(
            "percentile must lie in (0, 1), got {p}"
        )));
    }
    if input_dim == 0 || n_neurons == 0 || mean.len() != input_dim || std.len() != input_dim {
        return Err(AttackError::InvalidArgument(format!(
            "need {input_dim} means and deviations, got {} and {}",
            mean.len(),
            std.len()
        )));
    }
    let scale = 1.0 / (input_dim as f64).sqrt();
    let z = Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(p);
    let mut weight = Vec::with_capacity(input_dim * n_neurons);
    let mut bias = Vec::with_capacity(n_neurons);
    for _ in 0..n_neurons {
        let row: Vec<f64> = (0..input_dim)
            .map(|_| scale * Distribution::<f64>::sample(&StandardNormal, rng))
            .collect();
        let mu: f64 = row.iter().zip(mean).map(|(w, m)| w * m).sum();
        let sd = row.iter().zip(std).map(|(w, s)| (w * s).powi(2)).sum::<f64>().sqrt();
        bias.push(-(mu + sd * z));
        weight.extend(row);
    }
    Ok(TrapWeights {
        layer: DenseParams {
            weight: Tensor::new(vec![n_neurons, input_dim], weight).map_err(crate::nn::NnError::from)?,
            bias: Some(Tensor::vector(bias).map_err(crate::nn::NnError::from)?),
        },
        bias_percentile: p,
        scale,
    })
}

/// Replaces the first dense layer of `params` with the trap.
pub fn install_trap(spec: &NetworkSpec, params: &ParamSet, trap: &TrapWeights) -> Result<ParamSet, AttackError> {
    let idx = spec.first_dense();
    let mut out = params.clone();
    let slot = out
        .layer_mut(idx)
        .ok_or_else(|| AttackError::InvalidArgument("network has no dense layer".into()))?;
    if slot.weight.shape() != trap.layer.weight.shape() || slot.bias.is_some() != trap.layer.bias.is_some() {
        return Err(AttackError::InvalidArgument(format!(
            "trap is {:?}, first layer is {:?}",
            trap.layer.weight.shape(),
            slot.weight.shape()
        )));
    }
    *slot = trap.layer.clone();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::fired_neurons;
    use crate::rng::substream;

    #[test]
    fn firing_rate_matches_percentile() {
        let d = 20;
        let (mean, std) = (vec![0.3; d], vec![0.2; d]);
        let mut rng = substream(1, &[]);
        let trap = trap_weight_init(d, 8, &mean, &std, 0.875, &mut rng).unwrap();
        let b = trap.layer.bias.as_ref().unwrap().data().to_vec();
        let n = 10_000;
        let mut counts = [0usize; 8];
        for _ in 0..n {
            let x: Vec<f64> = (0..d)
                .map(|j| mean[j] + std[j] * Distribution::<f64>::sample(&StandardNormal, &mut rng))
                .collect();
            for i in fired_neurons(&trap.layer.weight, &b, &x).unwrap() {
                counts[i] += 1;
            }
        }
        for c in counts {
            assert!((c as f64 / n as f64 - 0.125).abs() < 0.05);
        }
        assert!(trap_weight_init(d, 8, &mean, &std, 1.0, &mut rng).is_err());
        let a = trap_weight_init(d, 3, &mean, &std, 0.5, &mut substream(7, &[])).unwrap();
        assert_eq!(
            a,
            trap_weight_init(d, 3, &mean, &std, 0.5, &mut substream(7, &[])).unwrap()
        );
    }
}
