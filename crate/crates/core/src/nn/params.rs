use std::collections::BTreeMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{NetworkSpec, NnError};
use crate::tensor::Tensor;

/// Weights of one dense layer. `weight` is `output × input`, so row `i` is
/// the incoming weight vector of neuron `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseParams {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl DenseParams {
    pub fn outputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[1]
    }
}

/// Parameters of a network, keyed by layer index. Iteration is in ascending
/// layer order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    layers: BTreeMap<usize, DenseParams>,
}

/// Gradients share the parameter layout.
pub type GradSet = ParamSet;

impl ParamSet {
    pub fn from_layers(layers: BTreeMap<usize, DenseParams>) -> Self {
        Self { layers }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(spec: &NetworkSpec, rng: &mut crate::rng::Rng) -> Self {
        let mut layers = BTreeMap::new();
        for (idx, input, output, bias) in spec.dense_layers() {
            let limit = (6.0 / (input + output) as f64).sqrt();
            let data = (0..input * output).map(|_| rng.random_range(-limit..=limit)).collect();
            layers.insert(
                idx,
                DenseParams {
                    weight: Tensor::from_raw(vec![output, input], data),
                    bias: bias.then(|| Tensor::zeros(vec![output])),
                },
            );
        }
        Self { layers }
    }

    pub fn zeros(spec: &NetworkSpec) -> Self {
        let mut layers = BTreeMap::new();
        for (idx, input, output, bias) in spec.dense_layers() {
            layers.insert(
                idx,
                DenseParams {
                    weight: Tensor::zeros(vec![output, input]),
                    bias: bias.then(|| Tensor::zeros(vec![output])),
                },
            );
        }
        Self { layers }
    }

    pub fn zeros_like(&self) -> Self {
        self.map(|_| 0.0)
    }

    pub fn layer(&self, idx: usize) -> Option<&DenseParams> {
        self.layers.get(&idx)
    }

    pub fn layer_mut(&mut self, idx: usize) -> Option<&mut DenseParams> {
        self.layers.get_mut(&idx)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &DenseParams)> {
        self.layers.iter().map(|(k, v)| (*k, v))
    }

    /// Checks that `self` matches the dense layers of `spec`.
    pub fn check_spec(&self, spec: &NetworkSpec) -> Result<(), NnError> {
        let expected: Vec<_> = spec.dense_layers().collect();
        if expected.len() != self.layers.len() {
            return Err(NnError::Incongruent(format!(
                "spec has {} dense layers, parameters have {}",
                expected.len(),
                self.layers.len()
            )));
        }
        for (idx, input, output, bias) in expected {
            let p = self
                .layers
                .get(&idx)
                .ok_or_else(|| NnError::Incongruent(format!("missing parameters for layer {idx}")))?;
            if p.weight.shape() != [output, input] || p.bias.is_some() != bias {
                return Err(NnError::Incongruent(format!(
                    "layer {idx}: expected {output}×{input} (bias: {bias}), found {:?} (bias: {})",
                    p.weight.shape(),
                    p.bias.is_some()
                )));
            }
            if let Some(b) = &p.bias {
                if b.shape() != [output] {
                    return Err(NnError::Incongruent(format!("layer {idx}: bias shape {:?}", b.shape())));
                }
            }
        }
        Ok(())
    }

    pub fn check_congruent(&self, other: &ParamSet) -> Result<(), NnError> {
        if self.layers.len() != other.layers.len() {
            return Err(NnError::Incongruent(format!(
                "{} layers vs {}",
                self.layers.len(),
                other.layers.len()
            )));
        }
        for ((ka, a), (kb, b)) in self.layers.iter().zip(&other.layers) {
            let bias_ok = match (&a.bias, &b.bias) {
                (Some(x), Some(y)) => x.same_shape(y),
                (None, None) => true,
                _ => false,
            };
            if ka != kb || !a.weight.same_shape(&b.weight) || !bias_ok {
                return Err(NnError::Incongruent(format!("layer {ka} does not match layer {kb}")));
            }
        }
        Ok(())
    }

    /// Elementwise map.
    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Self {
        let layers = self
            .layers
            .iter()
            .map(|(&k, p)| {
                let w = p.weight.data().iter().map(|&v| f(v)).collect();
                let weight = Tensor::from_raw(p.weight.shape().to_vec(), w);
                let bias = p
                    .bias
                    .as_ref()
                    .map(|b| Tensor::from_raw(b.shape().to_vec(), b.data().iter().map(|&v| f(v)).collect()));
                (k, DenseParams { weight, bias })
            })
            .collect();
        Self { layers }
    }

    /// Elementwise combination of two congruent sets.
    pub fn zip_map(&self, other: &ParamSet, mut f: impl FnMut(f64, f64) -> f64) -> Result<Self, NnError> {
        self.check_congruent(other)?;
        let layers = self
            .layers
            .iter()
            .zip(other.layers.values())
            .map(|((&k, a), b)| {
                let w = a
                    .weight
                    .data()
                    .iter()
                    .zip(b.weight.data())
                    .map(|(&x, &y)| f(x, y))
                    .collect();
                let weight = Tensor::from_raw(a.weight.shape().to_vec(), w);
                let bias = match (&a.bias, &b.bias) {
                    (Some(x), Some(y)) => Some(Tensor::from_raw(
                        x.shape().to_vec(),
                        x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect(),
                    )),
                    _ => None,
                };
                (k, DenseParams { weight, bias })
            })
            .collect();
        Ok(Self { layers })
    }

    /// `self += scale * other`, in place.
    pub fn add_scaled(&mut self, other: &ParamSet, scale: f64) -> Result<(), NnError> {
        self.check_congruent(other)?;
        for (a, b) in self.layers.values_mut().zip(other.layers.values()) {
            for (x, y) in a.weight.data_mut().iter_mut().zip(b.weight.data()) {
                *x += scale * y;
            }
            if let (Some(x), Some(y)) = (a.bias.as_mut(), b.bias.as_ref()) {
                for (p, q) in x.data_mut().iter_mut().zip(y.data()) {
                    *p += scale * q;
                }
            }
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .values()
            .map(|p| p.weight.len() + p.bias.as_ref().map_or(0, Tensor::len))
            .sum()
    }

    /// Flattens in layer order: each layer's weight (row-major) then bias.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for p in self.layers.values() {
            out.extend_from_slice(p.weight.data());
            if let Some(b) = &p.bias {
                out.extend_from_slice(b.data());
            }
        }
        out
    }

    /// Inverse of [`ParamSet::to_flat`] using `self` as the layout template.
    pub fn with_flat(&self, flat: &[f64]) -> Result<Self, NnError> {
        if flat.len() != self.num_params() {
            return Err(NnError::Incongruent(format!(
                "flat vector has {} values, layout needs {}",
                flat.len(),
                self.num_params()
            )));
        }
        let mut offset = 0;
        Ok(self.map(|_| {
            let v = flat[offset];
            offset += 1;
            v
        }))
    }

    pub fn l2_norm(&self) -> f64 {
        self.layers
            .values()
            .map(|p| p.weight.l2_norm_sq() + p.bias.as_ref().map_or(0.0, Tensor::l2_norm_sq))
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .values()
            .all(|p| p.weight.is_finite() && p.bias.as_ref().is_none_or(Tensor::is_finite))
    }

    /// `(name, shape)` for every stored tensor, in flat order.
    pub fn manifest(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for (k, p) in &self.layers {
            out.push((format!("layer{k}.weight"), p.weight.shape().to_vec()));
            if let Some(b) = &p.bias {
                out.push((format!("layer{k}.bias"), b.shape().to_vec()));
            }
        }
        out
    }
}
