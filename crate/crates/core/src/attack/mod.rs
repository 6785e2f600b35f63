//! Gradient-leakage attacks on the first dense layer.
//!
//! For `y = ReLU(Wx + b)` the gradient rows satisfy `∂L/∂wᵢ = (∂L/∂bᵢ)·x`
//! whenever neuron `i` fires for a single input `x`, so one division recovers
//! the input. With a batch, a neuron fired by exactly one sample still yields
//! that sample; neurons fired by several give mixtures. A dishonest server can
//! craft trap weights whose biases make each neuron fire rarely, so that many
//! neurons isolate single samples.

mod demo;
mod leakage;
mod trap;

use thiserror::Error;

use crate::nn::{GradSet, NetworkSpec, NnError};
use crate::tensor::Tensor;

pub use demo::{run_attack_demo, AttackDemoConfig, AttackSummary};
pub use leakage::{evaluate_leakage, gallery_svg, LeakageReport, LeakageRow};
pub use trap::{install_trap, trap_weight_init, TrapWeights};

/// `|∂L/∂bᵢ|` below this counts as a neuron that did not fire.
pub const BIAS_GRAD_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("neuron {neuron}: not fired or gradient vanished (|db| = {db:e})")]
    Vanished { neuron: usize, db: f64 },
    #[error("{0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Fed(#[from] crate::fed::FedError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Neurons with `wᵢᵀx + bᵢ > 0`.
pub fn fired_neurons(w: &Tensor, b: &[f64], x: &[f64]) -> Result<Vec<usize>, AttackError> {
    if w.cols() != x.len() || w.rows() != b.len() {
        return Err(AttackError::InvalidArgument(format!(
            "weight is {}×{}, bias has {} and input {} entries",
            w.rows(),
            w.cols(),
            b.len(),
            x.len()
        )));
    }
    Ok((0..w.rows())
        .filter(|&i| w.row(i).iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + b[i] > 0.0)
        .collect())
}

/// Row `i` of the weight gradient divided by the bias gradient of neuron `i`.
pub fn reconstruct_from_fc_grads(dw: &Tensor, db: &[f64], i: usize) -> Result<Vec<f64>, AttackError> {
    if i >= dw.rows() || db.len() != dw.rows() {
        return Err(AttackError::InvalidArgument(format!(
            "neuron {i} out of range for a {}-row gradient with {} bias entries",
            dw.rows(),
            db.len()
        )));
    }
    if db[i].abs() <= BIAS_GRAD_TOL {
        return Err(AttackError::Vanished { neuron: i, db: db[i] });
    }
    Ok(dw.row(i).iter().map(|v| v / db[i]).collect())
}

/// Samples recovered from every neuron whose bias gradient is non-zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionResult {
    pub samples: Vec<Vec<f64>>,
    /// Neuron each sample came from.
    pub neurons: Vec<usize>,
    /// Relative L2 distance of each sample to the nearest true input; empty
    /// until scored with [`ReconstructionResult::score`].
    pub residuals: Vec<f64>,
}

impl ReconstructionResult {
    /// Fills `residuals` against the rows of the true batch.
    pub fn score(mut self, truth: &Tensor) -> Result<Self, AttackError> {
        if self.samples.first().is_some_and(|s| s.len() != truth.cols()) {
            return Err(AttackError::InvalidArgument(format!(
                "recovered dimension {} differs from input dimension {}",
                self.samples[0].len(),
                truth.cols()
            )));
        }
        self.residuals = self
            .samples
            .iter()
            .map(|s| {
                (0..truth.rows())
                    .map(|r| relative_distance(s, truth.row(r)))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        Ok(self)
    }

    /// Distinct true rows recovered with relative residual at most `tol`.
    pub fn exact_count(&self, truth: &Tensor, tol: f64) -> usize {
        (0..truth.rows())
            .filter(|&r| self.samples.iter().any(|s| relative_distance(s, truth.row(r)) <= tol))
            .count()
    }
}

/// `‖a − b‖ / ‖b‖`, or the plain distance when `b = 0`.
pub fn relative_distance(a: &[f64], b: &[f64]) -> f64 {
    let d = l2_distance(a, b);
    let n = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n > 0.0 {
        d / n
    } else {
        d
    }
}

pub fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Applies the division to every usable neuron of the first dense layer.
pub fn reconstruct_all(spec: &NetworkSpec, grads: &GradSet) -> Result<ReconstructionResult, AttackError> {
    let layer = grads
        .layer(spec.first_dense())
        .ok_or_else(|| AttackError::InvalidArgument("gradient has no first dense layer".into()))?;
    let db = layer
        .bias
        .as_ref()
        .ok_or_else(|| AttackError::InvalidArgument("first dense layer has no bias".into()))?
        .data();
    let mut out = ReconstructionResult {
        samples: Vec::new(),
        neurons: Vec::new(),
        residuals: Vec::new(),
    };
    for i in 0..layer.weight.rows() {
        match reconstruct_from_fc_grads(&layer.weight, db, i) {
            Ok(x) => {
                out.samples.push(x);
                out.neurons.push(i);
            }
            Err(AttackError::Vanished { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}
