//! The end-to-end pipeline: data, partition, generators, federation,
//! adaptation and evaluation.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{DatasetSpec, ExperimentConfig, Mode};
use super::metrics::{accuracy, compute_bmta, compute_macro_f1};
use super::plot::{chart, Series, Style};
use super::{AtStage, HarnessError, Stage};
use crate::data::{
    dirichlet_partition, downsample, gaussian_blobs, glyph_digits, load_cifar_batch, load_csv, load_idx,
    split_train_val, two_moons, LabeledDataset,
};
use crate::datagen::{synthesize, train_dp_generator, DatagenReport, SyntheticDataset};
use crate::digest::config_hash;
use crate::dp::RdpAccountant;
use crate::fed::{
    local_adapt, local_train, run_fedavg, run_pppfl, save_model, write_round_reports, ClientState, DataSource,
    FedConfig, FedError, FederationData, RoundReport, SecretSplits,
};
use crate::nn::{self, NetworkSpec, ParamSet};
use crate::rng::{domain, fork, substream};

fn take(ds: LabeledDataset, limit: Option<usize>) -> LabeledDataset {
    match limit {
        Some(n) if n < ds.len() => ds.subset(&(0..n).collect::<Vec<_>>()),
        _ => ds,
    }
}

fn shrink(ds: LabeledDataset, factor: usize) -> Result<LabeledDataset, HarnessError> {
    if factor <= 1 {
        return Ok(ds);
    }
    downsample(&ds, factor).at(Stage::Data)
}

/// Materializes the pooled dataset.
pub fn load_dataset(spec: &DatasetSpec) -> Result<LabeledDataset, HarnessError> {
    match spec {
        DatasetSpec::Glyphs { samples, side, seed } => glyph_digits(*samples, *side, *seed).at(Stage::Data),
        DatasetSpec::Blobs {
            samples,
            classes,
            dim,
            spread,
            seed,
        } => gaussian_blobs(*samples, *classes, *dim, *spread, *seed).at(Stage::Data),
        DatasetSpec::Moons { samples, noise, seed } => two_moons(*samples, *noise, *seed).at(Stage::Data),
        DatasetSpec::Idx {
            images,
            labels,
            limit,
            downsample,
        } => shrink(take(load_idx(images, labels).at(Stage::Data)?, *limit), *downsample),
        DatasetSpec::Cifar {
            batches,
            limit,
            downsample,
        } => {
            let parts = batches
                .iter()
                .map(|p| load_cifar_batch(p))
                .collect::<Result<Vec<_>, _>>()
                .at(Stage::Data)?;
            let joined = LabeledDataset::concat(&parts.iter().collect::<Vec<_>>()).at(Stage::Data)?;
            shrink(take(joined, *limit), *downsample)
        }
        DatasetSpec::Csv { path, limit } => Ok(take(load_csv(path).at(Stage::Data)?, *limit)),
    }
}

/// A client's secret training and validation data.
#[derive(Debug, Clone)]
pub struct ClientSplits {
    pub id: usize,
    pub train: LabeledDataset,
    pub val: LabeledDataset,
}

/// Dirichlet label-skew partition followed by a stratified train/validation
/// split per client.
pub fn build_clients(cfg: &ExperimentConfig, data: &LabeledDataset) -> Result<Vec<ClientSplits>, HarnessError> {
    let part_seed = fork(&mut substream(cfg.seed, &[domain::PARTITION]));
    let plan = dirichlet_partition(data.labels(), cfg.clients, cfg.tau, part_seed).at(Stage::Data)?;
    plan.clients
        .iter()
        .enumerate()
        .map(|(id, idx)| {
            let mut rng = substream(cfg.seed, &[domain::SPLIT, id as u64]);
            let (tr, va) = split_train_val(idx, data.labels(), cfg.val_fraction, &mut rng).at(Stage::Data)?;
            Ok(ClientSplits {
                id,
                train: data.subset(&tr),
                val: data.subset(&va),
            })
        })
        .collect()
}

/// Classifier architecture for the run.
pub fn model_spec(cfg: &ExperimentConfig, dim: usize, classes: usize) -> Result<NetworkSpec, HarnessError> {
    let mut dims = vec![dim];
    dims.extend_from_slice(&cfg.hidden);
    dims.push(classes);
    NetworkSpec::mlp(&dims, true).at(Stage::Config)
}

#[derive(Serialize)]
struct DatagenKey<'a> {
    dataset: &'a DatasetSpec,
    clients: usize,
    tau: f64,
    val_fraction: f64,
    seed: u64,
    client: usize,
    epsilon: f64,
    datagen: &'a crate::datagen::DpGanConfig,
    synthetic_per_class: usize,
}

/// Trains a client's generators on its secret training split and samples its
/// synthetic dataset. With a cache directory, results are stored under a key
/// covering everything they depend on and reused on later runs.
pub fn client_synthetic(
    cfg: &ExperimentConfig,
    client: &ClientSplits,
    cache: Option<&Path>,
) -> Result<(SyntheticDataset, DatagenReport, RdpAccountant), HarnessError> {
    let eps = cfg.epsilons[client.id];
    let key = config_hash(&DatagenKey {
        dataset: &cfg.dataset,
        clients: cfg.clients,
        tau: cfg.tau,
        val_fraction: cfg.val_fraction,
        seed: cfg.seed,
        client: client.id,
        epsilon: eps,
        datagen: &cfg.datagen,
        synthetic_per_class: cfg.synthetic_per_class,
    });
    let slot = cache.map(|c| c.join(format!("datagen-{}", &key[..16])));
    if let Some(dir) = &slot {
        let files = (
            dir.join("synthetic.ppsd"),
            dir.join("report.json"),
            dir.join("accountant.json"),
        );
        if files.0.exists() && files.1.exists() && files.2.exists() {
            let synth = SyntheticDataset::load(&files.0).at(Stage::Datagen)?;
            let report: DatagenReport =
                serde_json::from_slice(&std::fs::read(&files.1).at(Stage::Datagen)?).at(Stage::Datagen)?;
            let acc =
                RdpAccountant::from_json(&std::fs::read_to_string(&files.2).at(Stage::Datagen)?).at(Stage::Datagen)?;
            return Ok((synth, report, acc));
        }
    }
    let dg_seed = fork(&mut substream(cfg.seed, &[domain::DATAGEN, client.id as u64]));
    let out = train_dp_generator(&client.train, &cfg.datagen, eps, client.id as u64, dg_seed).at(Stage::Datagen)?;
    let mut rng = substream(cfg.seed, &[domain::SYNTH, client.id as u64]);
    let synth = synthesize(&out.generators, cfg.synthetic_per_class, &mut rng).at(Stage::Datagen)?;
    if let Some(dir) = &slot {
        std::fs::create_dir_all(dir).at(Stage::Output)?;
        synth.save(&dir.join("synthetic.ppsd")).at(Stage::Output)?;
        let report = serde_json::to_string_pretty(&out.report).at(Stage::Output)?;
        std::fs::write(dir.join("report.json"), report).at(Stage::Output)?;
        out.accountant.save(&dir.join("accountant.json")).at(Stage::Output)?;
    }
    Ok((synth, out.report, out.accountant))
}

/// Per-round, per-client scores on the secret validation splits.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsTable {
    /// `accuracy[t][i]`: client `i` after round `t + 1`.
    pub accuracy: Vec<Vec<f64>>,
    pub macro_f1: Vec<Vec<f64>>,
}

impl MetricsTable {
    pub fn rounds(&self) -> usize {
        self.accuracy.len()
    }

    pub fn bmta(&self) -> Result<f64, HarnessError> {
        compute_bmta(&self.accuracy)
    }

    pub fn bmt_f1(&self) -> Result<f64, HarnessError> {
        compute_bmta(&self.macro_f1)
    }

    pub fn mean_accuracy(&self, round: usize) -> f64 {
        let row = &self.accuracy[round];
        row.iter().sum::<f64>() / row.len() as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("round,client_id,accuracy,macro_f1\n");
        for (t, (acc, f1)) in self.accuracy.iter().zip(&self.macro_f1).enumerate() {
            for (i, (a, f)) in acc.iter().zip(f1).enumerate() {
                out.push_str(&format!("{},{i},{a},{f}\n", t + 1));
            }
        }
        out
    }

    fn push(&mut self, row: Vec<(f64, f64)>) {
        self.accuracy.push(row.iter().map(|r| r.0).collect());
        self.macro_f1.push(row.iter().map(|r| r.1).collect());
    }
}

/// Headline numbers of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mode: Mode,
    pub seed: u64,
    pub config_hash: String,
    pub rounds_completed: usize,
    pub diverged_at: Option<usize>,
    pub bmta: Option<f64>,
    pub bmt_f1: Option<f64>,
    /// 1-based round attaining the BMTA.
    pub best_round: Option<usize>,
    pub final_mean_accuracy: Option<f64>,
    /// Each client's accuracy at the best round.
    pub client_accuracy: Vec<f64>,
    pub epsilons: Vec<f64>,
    pub epsilon_spent: Vec<Option<f64>>,
}

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub summary: RunSummary,
    pub metrics: MetricsTable,
    pub reports: Vec<RoundReport>,
    pub spec: NetworkSpec,
    /// Global model, for federated modes.
    pub global: Option<ParamSet>,
    /// Final per-client models.
    pub client_models: Vec<ParamSet>,
    pub datagen: Vec<DatagenReport>,
}

fn evaluate(spec: &NetworkSpec, params: &ParamSet, val: &LabeledDataset) -> Result<(f64, f64), nn::NnError> {
    let preds = nn::predict(spec, params, val.samples())?;
    Ok((
        accuracy(&preds, val.labels()),
        compute_macro_f1(&preds, val.labels(), val.n_classes()),
    ))
}

fn federation_split(
    cfg: &ExperimentConfig,
    id: usize,
    data: &LabeledDataset,
    source: DataSource,
) -> Result<FederationData, HarnessError> {
    let salt = match source {
        DataSource::Synthetic => 1,
        DataSource::Secret => 2,
    };
    let mut rng = substream(cfg.seed, &[domain::SPLIT, id as u64, salt]);
    let all: Vec<usize> = (0..data.len()).collect();
    let (support, query) = split_train_val(&all, data.labels(), cfg.query_fraction, &mut rng).at(Stage::Data)?;
    Ok(FederationData {
        support: data.subset(&support),
        query: data.subset(&query),
        source,
    })
}

/// Runs one experiment and writes its artifacts under
/// `out_root/<first 16 hex digits of the config hash>`.
pub fn run_experiment(cfg: &ExperimentConfig, out_root: &Path) -> Result<RunArtifacts, HarnessError> {
    cfg.validate()?;
    let hash = cfg.hash();
    let dir = out_root.join(&hash[..16]);
    std::fs::create_dir_all(dir.join("models")).at(Stage::Output)?;

    let data = load_dataset(&cfg.dataset)?;
    let splits = build_clients(cfg, &data)?;
    let spec = model_spec(cfg, data.dim(), data.n_classes())?;
    let init = ParamSet::init(&spec, &mut substream(cfg.seed, &[domain::INIT]));

    let mut synthetic = Vec::new();
    let mut datagen = Vec::new();
    if cfg.mode.needs_synthetic() {
        let cache = out_root.join("cache");
        std::fs::create_dir_all(dir.join("datagen")).at(Stage::Output)?;
        for c in &splits {
            let (synth, report, acc) = client_synthetic(cfg, c, Some(&cache))?;
            let base = dir.join("datagen").join(format!("client{}", c.id));
            synth.save(&base.with_extension("ppsd")).at(Stage::Output)?;
            let text = serde_json::to_string_pretty(&report).at(Stage::Output)?;
            std::fs::write(base.with_extension("report.json"), text).at(Stage::Output)?;
            acc.save(&base.with_extension("accountant.json")).at(Stage::Output)?;
            synthetic.push(synth.to_labeled("synthetic").at(Stage::Datagen)?);
            datagen.push(report);
        }
    }

    let mut metrics = MetricsTable::default();
    let mut reports = Vec::new();
    let mut global = None;
    let mut diverged_at = None;
    let client_models: Vec<ParamSet>;

    match cfg.mode {
        Mode::LocalSecret | Mode::LocalSynthetic => {
            let trained: Vec<Vec<(ParamSet, (f64, f64))>> = splits
                .par_iter()
                .map(|c| {
                    let data = match cfg.mode {
                        Mode::LocalSecret => &c.train,
                        _ => &synthetic[c.id],
                    };
                    let mut theta = init.clone();
                    let mut rows = Vec::with_capacity(cfg.fed.rounds);
                    for t in 1..=cfg.fed.rounds {
                        let mut rng = substream(cfg.seed, &[domain::LOCAL, c.id as u64, t as u64]);
                        theta = local_train(
                            &spec,
                            &theta,
                            data,
                            cfg.local_epochs,
                            cfg.local_lr,
                            cfg.local_optimizer,
                            cfg.fed.batch_size,
                            &mut rng,
                        )?;
                        let score = evaluate(&spec, &theta, &c.val)?;
                        rows.push((theta.clone(), score));
                    }
                    Ok(rows)
                })
                .collect::<Result<_, FedError>>()
                .at(Stage::Federation)?;
            for t in 0..cfg.fed.rounds {
                metrics.push(trained.iter().map(|rows| rows[t].1).collect());
            }
            client_models = trained
                .into_iter()
                .map(|mut rows| rows.pop().expect("rounds ≥ 1").0)
                .collect();
        }
        Mode::Pppfl | Mode::Fedmeta | Mode::Fedavg | Mode::CollabSecret => {
            let mut fed_cfg: FedConfig = match cfg.mode {
                Mode::Fedmeta => cfg.fed.fedmeta(),
                _ => cfg.fed.clone(),
            };
            let mut clients = Vec::with_capacity(splits.len());
            for c in &splits {
                let federation = if cfg.mode == Mode::CollabSecret {
                    fed_cfg.federate_on_secret = true;
                    federation_split(cfg, c.id, &c.train, DataSource::Secret)?
                } else {
                    federation_split(cfg, c.id, &synthetic[c.id], DataSource::Synthetic)?
                };
                let secret = SecretSplits {
                    train: c.train.clone(),
                    val: c.val.clone(),
                };
                clients.push(ClientState::new(c.id, cfg.epsilons[c.id], federation, secret).at(Stage::Federation)?);
            }
            let fed_seed = fork(&mut substream(cfg.seed, &[domain::CLIENT]));
            let eval =
                |server: &crate::fed::ServerState, _: &RoundReport, cs: &[ClientState]| -> Result<(), FedError> {
                    let row = cs
                        .par_iter()
                        .map(|c| {
                            let adapted = local_adapt(
                                &spec,
                                &server.params,
                                c.secret_train(),
                                fed_cfg.finetune_steps,
                                fed_cfg.finetune_lr,
                                fed_cfg.finetune_optimizer,
                            )?;
                            Ok(evaluate(&spec, &adapted, c.secret_val())?)
                        })
                        .collect::<Result<Vec<_>, FedError>>()?;
                    metrics.push(row);
                    Ok(())
                };
            let outcome = if cfg.mode == Mode::Fedavg {
                run_fedavg(&spec, init, &mut clients, &fed_cfg, fed_seed, eval)
            } else {
                run_pppfl(&spec, init, &mut clients, &fed_cfg, fed_seed, eval)
            }
            .at(Stage::Federation)?;
            diverged_at = outcome.diverged_at;
            reports = outcome.reports;
            global = Some(outcome.server.params);
            client_models = outcome.adapted;
        }
    }

    let best = (0..metrics.rounds()).fold(None, |best: Option<usize>, t| match best {
        Some(b) if metrics.mean_accuracy(b) >= metrics.mean_accuracy(t) => Some(b),
        _ => Some(t),
    });
    let summary = RunSummary {
        mode: cfg.mode,
        seed: cfg.seed,
        config_hash: hash.clone(),
        rounds_completed: metrics.rounds(),
        diverged_at,
        bmta: metrics.bmta().ok(),
        bmt_f1: metrics.bmt_f1().ok(),
        best_round: best.map(|b| b + 1),
        final_mean_accuracy: metrics.rounds().checked_sub(1).map(|t| metrics.mean_accuracy(t)),
        client_accuracy: best.map(|b| metrics.accuracy[b].clone()).unwrap_or_default(),
        epsilons: cfg.epsilons.clone(),
        epsilon_spent: datagen.iter().map(|r| r.epsilon_spent).collect(),
    };

    write_outputs(
        cfg,
        &dir,
        &spec,
        &metrics,
        &reports,
        &summary,
        global.as_ref(),
        &client_models,
    )?;
    Ok(RunArtifacts {
        dir,
        summary,
        metrics,
        reports,
        spec,
        global,
        client_models,
        datagen,
    })
}

#[allow(clippy::too_many_arguments)]
fn write_outputs(
    cfg: &ExperimentConfig,
    dir: &Path,
    spec: &NetworkSpec,
    metrics: &MetricsTable,
    reports: &[RoundReport],
    summary: &RunSummary,
    global: Option<&ParamSet>,
    clients: &[ParamSet],
) -> Result<(), HarnessError> {
    let w = |name: &str, text: String| std::fs::write(dir.join(name), text).at(Stage::Output);
    w("config.toml", cfg.to_toml())?;
    w("metrics.csv", metrics.to_csv())?;
    w("summary.json", serde_json::to_string_pretty(summary).at(Stage::Output)?)?;
    let models = dir.join("models");
    if let Some(g) = global {
        save_model(&models, "global", spec, g).at(Stage::Output)?;
    }
    for (i, p) in clients.iter().enumerate() {
        save_model(&models, &format!("client{i}"), spec, p).at(Stage::Output)?;
    }
    let acc: Vec<(f64, f64)> = (0..metrics.rounds())
        .map(|t| ((t + 1) as f64, metrics.mean_accuracy(t)))
        .collect();
    w(
        "accuracy.svg",
        chart(
            "Mean validation accuracy",
            "round",
            "accuracy",
            &[Series::new(summary.mode.name(), acc)],
            Style::Lines,
        ),
    )?;
    if !reports.is_empty() {
        write_round_reports(&dir.join("rounds.csv"), reports).at(Stage::Output)?;
        let mean = |f: &dyn Fn(&crate::fed::ClientRoundStats) -> f64| -> Vec<(f64, f64)> {
            reports
                .iter()
                .map(|r| {
                    let v = r.clients.iter().map(f).sum::<f64>() / r.clients.len() as f64;
                    (r.round as f64, v)
                })
                .collect()
        };
        let series = [
            Series::new("support", mean(&|c| c.support_loss)),
            Series::new("query", mean(&|c| c.query_loss)),
        ];
        w(
            "loss.svg",
            chart("Mean client loss", "round", "cross-entropy", &series, Style::Lines),
        )?;
    }
    Ok(())
}
