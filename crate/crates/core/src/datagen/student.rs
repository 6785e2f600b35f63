//! Student generators and the privacy-preserving guidance round.

use std::collections::BTreeMap;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::teacher::{teacher_directions, TeacherEnsemble};
use super::{DatagenError, DpGanConfig};
use crate::data::ImageShape;
use crate::dp::{dp_sum_aggregate, threshold_votes, topk_sign_compress, DpError, RdpAccountant, SparseSignVec};
use crate::nn::{self, NetworkSpec, NnError, OptimState, ParamSet};
use crate::rng::{substream, Rng};
use crate::tensor::Tensor;

/// Provenance attached to generators and everything synthesized from them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub client: u64,
    /// `None` when trained without privacy noise.
    pub epsilon_spent: Option<f64>,
    pub delta: f64,
    pub config_hash: String,
}

/// One generator per class, sharing an architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSet {
    pub spec: NetworkSpec,
    pub latent_dim: usize,
    pub n_classes: usize,
    pub generators: BTreeMap<usize, ParamSet>,
    pub image: Option<ImageShape>,
    pub provenance: Provenance,
}

impl GeneratorSet {
    pub fn data_dim(&self) -> usize {
        self.spec.output_dim()
    }

    pub fn classes(&self) -> Vec<usize> {
        self.generators.keys().copied().collect()
    }
}

/// `n × latent_dim` standard normal draws.
pub fn sample_latent(n: usize, latent_dim: usize, rng: &mut Rng) -> Tensor {
    let data = (0..n * latent_dim).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::from_raw(vec![n, latent_dim], data)
}

/// One optimizer step pulling `G(z)` toward the frozen target `G(z) + γ·ḡ`
/// under mean squared error. Returns the new parameters, optimizer state and
/// the loss before the step, which equals `γ²·‖ḡ‖² / (rows·dim)`.
pub fn student_update(
    spec: &NetworkSpec,
    params: &ParamSet,
    optim: &OptimState,
    z: &Tensor,
    g_bar: &Tensor,
    gamma: f64,
    lr: f64,
) -> Result<(ParamSet, OptimState, f64), NnError> {
    if g_bar.rows() != z.rows() || g_bar.cols() != spec.output_dim() {
        return Err(NnError::ShapeMismatch {
            layer: spec.layers.len().saturating_sub(1),
            expected: spec.output_dim(),
            found: g_bar.cols(),
        });
    }
    let (loss, grads, _) = nn::value_and_grad(spec, params, z, |out, _| {
        let m = out.len() as f64;
        // out − (out + γḡ) = −γḡ, computed without cancellation
        let diff: Vec<f64> = g_bar.data().iter().map(|g| -gamma * g).collect();
        let loss = diff.iter().map(|d| d * d).sum::<f64>() / m;
        Ok((loss, diff.iter().map(|d| 2.0 * d / m).collect()))
    })?;
    let (state, params) = optim.step(params, &grads, lr)?;
    Ok((params, state, loss))
}

/// Aggregates the teachers' compressed directions on `fake` (one row per
/// synthetic sample) into thresholded votes `ḡ ∈ {−1, 0, +1}`.
///
/// Each row is one Gaussian aggregation. With privacy enabled the accountant
/// is charged before anything is computed; a round that would push the
/// accountant past `epsilon_target` is refused with
/// [`DpError::BudgetExhausted`]. Teacher `t` draws its quantization noise from
/// `substream(seed, [t])` and the vote noise comes from `substream(seed, [N])`.
pub fn dp_gradient_round(
    teachers: &TeacherEnsemble,
    fake: &Tensor,
    cfg: &DpGanConfig,
    accountant: &RdpAccountant,
    epsilon_target: f64,
    seed: u64,
) -> Result<(Tensor, RdpAccountant), DatagenError> {
    let (b, d) = (fake.rows(), fake.cols());
    if cfg.top_k > d {
        return Err(DpError::TopKTooLarge { k: cfg.top_k, dim: d }.into());
    }
    let next = if cfg.dp_enabled {
        let next = accountant.compose_topk_gaussian(cfg.top_k, cfg.noise_sigma, b as u64)?;
        let eps = next.best_epsilon()?.epsilon;
        if eps > epsilon_target {
            return Err(DpError::BudgetExhausted {
                would_reach: eps,
                target: epsilon_target,
            }
            .into());
        }
        next
    } else {
        accountant.clone()
    };

    let n = teachers.len();
    let compressed: Vec<Vec<SparseSignVec>> = (0..n)
        .into_par_iter()
        .map(|t| -> Result<Vec<SparseSignVec>, DatagenError> {
            let dirs = teacher_directions(&teachers.spec, &teachers.params[t], fake)?;
            let mut rng = substream(seed, &[t as u64]);
            (0..b)
                .map(|i| {
                    topk_sign_compress(dirs.row(i), cfg.top_k, cfg.clip_norm, cfg.sign_mode, &mut rng)
                        .map_err(DatagenError::from)
                })
                .collect()
        })
        .collect::<Result<_, _>>()?;

    let sigma = if cfg.dp_enabled { cfg.noise_sigma } else { 0.0 };
    let mut noise_rng = substream(seed, &[n as u64]);
    let mut g_bar = Vec::with_capacity(b * d);
    let mut per_teacher: Vec<_> = compressed.into_iter().map(Vec::into_iter).collect();
    for _ in 0..b {
        let votes: Vec<SparseSignVec> = per_teacher
            .iter_mut()
            .map(|it| it.next().expect("one vote per sample"))
            .collect();
        let noisy = dp_sum_aggregate(d, &votes, sigma, &mut noise_rng)?;
        g_bar.extend(
            threshold_votes(&noisy, cfg.vote_threshold, n)
                .into_iter()
                .map(f64::from),
        );
    }
    Ok((Tensor::new(vec![b, d], g_bar)?, next))
}
