use std::collections::BTreeMap;

use rand::seq::index::sample as sample_indices;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::student::{dp_gradient_round, sample_latent, student_update, GeneratorSet, Provenance};
use super::teacher::{partition_disjoint, teacher_train_step, TeacherEnsemble};
use super::{DatagenError, DpGanConfig};
use crate::data::LabeledDataset;
use crate::digest::config_hash;
use crate::dp::RdpAccountant;
use crate::nn::{self, Layer, NetworkSpec, OptimState, ParamSet};
use crate::rng::{domain, fork, substream};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// The next round would have exceeded the class budget.
    Budget,
    MaxRounds,
    /// Too few samples to train; the generator stays at initialization.
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class: usize,
    pub samples: usize,
    pub teachers: usize,
    pub rounds: usize,
    /// Noisy aggregations performed, one per generated sample.
    pub aggregations: u64,
    /// `None` when trained without noise.
    pub epsilon: Option<f64>,
    pub stop: StopReason,
    pub final_teacher_loss: Option<f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatagenReport {
    pub client: u64,
    pub epsilon_target: f64,
    pub epsilon_per_class: f64,
    pub epsilon_spent: Option<f64>,
    pub delta: f64,
    pub top_k: usize,
    pub noise_sigma: f64,
    pub dp_enabled: bool,
    pub classes: Vec<ClassReport>,
}

impl DatagenReport {
    pub fn total_aggregations(&self) -> u64 {
        self.classes.iter().map(|c| c.aggregations).sum()
    }

    /// Recomputes the spent budget from `(k, σ, δ)` and the aggregation
    /// counts alone. Matches `epsilon_spent` up to summation order.
    pub fn reconstruct_epsilon(&self) -> Result<Option<f64>, DatagenError> {
        if !self.dp_enabled {
            return Ok(None);
        }
        let total = self.total_aggregations();
        if total == 0 {
            return Ok(Some(0.0));
        }
        let acc =
            RdpAccountant::with_default_grid(self.delta)?.compose_topk_gaussian(self.top_k, self.noise_sigma, total)?;
        Ok(Some(acc.best_epsilon()?.epsilon))
    }
}

#[derive(Debug, Clone)]
pub struct DatagenOutput {
    pub generators: GeneratorSet,
    pub accountant: RdpAccountant,
    pub report: DatagenReport,
}

fn network_dims(first: usize, hidden: &[usize], last: usize) -> Vec<usize> {
    let mut dims = vec![first];
    dims.extend_from_slice(hidden);
    dims.push(last);
    dims
}

/// Largest `b ≤ max` such that `b` more aggregations keep the accountant
/// within `target`.
fn affordable(acc: &RdpAccountant, cfg: &DpGanConfig, target: f64, max: usize) -> Result<usize, DatagenError> {
    let fits = |b: usize| -> Result<bool, DatagenError> {
        let next = acc.compose_topk_gaussian(cfg.top_k, cfg.noise_sigma, b as u64)?;
        Ok(next.best_epsilon()?.epsilon <= target)
    };
    if fits(max)? {
        return Ok(max);
    }
    let (mut lo, mut hi) = (0, max);
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if fits(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

struct ClassRun {
    params: ParamSet,
    accountant: RdpAccountant,
    report: ClassReport,
}

fn train_class(
    class: usize,
    data: &Tensor,
    cfg: &DpGanConfig,
    gen_spec: &NetworkSpec,
    teacher_spec: &NetworkSpec,
    target: f64,
    seed: u64,
) -> Result<ClassRun, DatagenError> {
    let key = class as u64;
    let mut init_rng = substream(seed, &[domain::DATAGEN, key, 0]);
    let mut params = ParamSet::init(gen_spec, &mut init_rng);
    let mut accountant = RdpAccountant::with_default_grid(cfg.delta)?;
    let n = data.rows();
    let mut report = ClassReport {
        class,
        samples: n,
        teachers: 0,
        rounds: 0,
        aggregations: 0,
        epsilon: cfg.dp_enabled.then_some(0.0),
        stop: StopReason::Skipped,
        final_teacher_loss: None,
        warnings: Vec::new(),
    };
    if n < 2 {
        let msg = format!("class {class} has {n} sample(s); generator left untrained");
        log::warn!("{msg}");
        report.warnings.push(msg);
        return Ok(ClassRun {
            params,
            accountant,
            report,
        });
    }
    let n_teachers = cfg.n_teachers.min(n);
    if n_teachers < cfg.n_teachers {
        let msg = format!(
            "class {class} has {n} samples; using {n_teachers} teachers instead of {}",
            cfg.n_teachers
        );
        log::warn!("{msg}");
        report.warnings.push(msg);
    }
    report.teachers = n_teachers;
    let rows: Vec<usize> = (0..n).collect();
    let shards = partition_disjoint(&rows, n_teachers, &mut init_rng)?;
    let mut teachers = TeacherEnsemble::new(teacher_spec.clone(), shards, cfg.teacher_optimizer, &mut init_rng)?;
    let mut gen_state = OptimState::new(cfg.generator_optimizer, &params);
    report.stop = StopReason::MaxRounds;

    for round in 0..cfg.max_rounds {
        let r = round as u64;
        let b = if cfg.dp_enabled {
            affordable(&accountant, cfg, target, cfg.batch_size)?
        } else {
            cfg.batch_size
        };
        if b == 0 {
            report.stop = StopReason::Budget;
            break;
        }
        let z = sample_latent(b, cfg.latent_dim, &mut substream(seed, &[domain::DATAGEN, key, 1, r]));
        let fake = nn::forward(gen_spec, &params, &z)?;

        // Each teacher trains on its own shard only.
        let stepped: Vec<(ParamSet, OptimState, f64)> = (0..teachers.len())
            .into_par_iter()
            .map(|t| -> Result<_, DatagenError> {
                let mut rng = substream(seed, &[domain::DATAGEN, key, 2, r, t as u64]);
                let shard = &teachers.shards[t];
                let (mut p, mut s, mut loss) = (teachers.params[t].clone(), teachers.optim[t].clone(), 0.0);
                for _ in 0..cfg.steps_per_epoch {
                    let take = shard.len().min(cfg.batch_size);
                    let pick: Vec<usize> = sample_indices(&mut rng, shard.len(), take)
                        .into_iter()
                        .map(|i| shard[i])
                        .collect();
                    let real = data.select_rows(&pick);
                    let out = teacher_train_step(&teachers.spec, &p, &s, &real, &fake, cfg.teacher_lr)?;
                    (p, s, loss) = out;
                }
                Ok((p, s, loss))
            })
            .collect::<Result<_, _>>()?;
        let mut mean_loss = 0.0;
        for (t, (p, s, l)) in stepped.into_iter().enumerate() {
            teachers.params[t] = p;
            teachers.optim[t] = s;
            mean_loss += l / teachers.len() as f64;
        }
        report.final_teacher_loss = Some(mean_loss);

        let round_seed = fork(&mut substream(seed, &[domain::DATAGEN, key, 3, r]));
        let (g_bar, next) = dp_gradient_round(&teachers, &fake, cfg, &accountant, target, round_seed)?;
        accountant = next;
        if cfg.dp_enabled {
            report.aggregations += b as u64;
            let eps = accountant.best_epsilon()?.epsilon;
            debug_assert!(eps <= target);
            report.epsilon = Some(eps);
        }
        let (p, s, _) = student_update(
            gen_spec,
            &params,
            &gen_state,
            &z,
            &g_bar,
            cfg.student_step,
            cfg.generator_lr,
        )?;
        params = p;
        gen_state = s;
        report.rounds += 1;
    }
    if !cfg.dp_enabled {
        report.aggregations = (report.rounds * cfg.batch_size) as u64;
    }
    Ok(ClassRun {
        params,
        accountant,
        report,
    })
}

/// Trains one generator per class present in `data`, splitting
/// `epsilon_target` evenly across the trainable classes. The returned
/// accountant is the per-order sum of the class accountants.
pub fn train_dp_generator(
    data: &LabeledDataset,
    cfg: &DpGanConfig,
    epsilon_target: f64,
    client: u64,
    seed: u64,
) -> Result<DatagenOutput, DatagenError> {
    let cfg = DpGanConfig {
        epsilon_target,
        ..cfg.clone()
    };
    cfg.validate_for_dim(data.dim())?;
    // Sigmoid output keeps generated pixels in the data range.
    let mut gen_layers =
        NetworkSpec::mlp(&network_dims(cfg.latent_dim, &cfg.generator_hidden, data.dim()), false)?.layers;
    gen_layers.push(Layer::Sigmoid);
    let gen_spec = NetworkSpec::new(gen_layers)?;
    let teacher_spec = NetworkSpec::mlp(&network_dims(data.dim(), &cfg.teacher_hidden, 1), false)?;
    let by_class = data.indices_by_class();
    let trainable = by_class.values().filter(|v| v.len() >= 2).count().max(1);
    let per_class = epsilon_target / trainable as f64;

    let runs: Vec<ClassRun> = by_class
        .par_iter()
        .map(|(&class, idx)| {
            train_class(
                class,
                &data.samples().select_rows(idx),
                &cfg,
                &gen_spec,
                &teacher_spec,
                per_class,
                seed,
            )
        })
        .collect::<Result<_, _>>()?;

    let mut accountant = RdpAccountant::with_default_grid(cfg.delta)?;
    let mut generators = BTreeMap::new();
    let mut classes = Vec::new();
    for run in runs {
        accountant = accountant.merge(&run.accountant)?;
        generators.insert(run.report.class, run.params);
        classes.push(run.report);
    }
    // No aggregation means no access to the data, whatever the conversion
    // bound says about an all-zero accountant.
    let epsilon_spent = if !cfg.dp_enabled {
        None
    } else if classes.iter().all(|c| c.aggregations == 0) {
        Some(0.0)
    } else {
        let eps = accountant.best_epsilon()?.epsilon;
        if eps > epsilon_target {
            return Err(DatagenError::InvalidConfig(format!(
                "accounting invariant violated: spent {eps} > target {epsilon_target}"
            )));
        }
        Some(eps)
    };
    let provenance = Provenance {
        client,
        epsilon_spent,
        delta: cfg.delta,
        config_hash: config_hash(&cfg),
    };
    Ok(DatagenOutput {
        generators: GeneratorSet {
            spec: gen_spec,
            latent_dim: cfg.latent_dim,
            n_classes: data.n_classes(),
            generators,
            image: data.image_shape(),
            provenance,
        },
        accountant,
        report: DatagenReport {
            client,
            epsilon_target,
            epsilon_per_class: per_class,
            epsilon_spent,
            delta: cfg.delta,
            top_k: cfg.top_k,
            noise_sigma: cfg.noise_sigma,
            dp_enabled: cfg.dp_enabled,
            classes,
        },
    })
}
