//! Rounds and full federation runs.

use std::time::{Duration, Instant};

use rayon::prelude::*;

use super::client::{client_inner_update, client_query_grad, local_adapt, local_train, ClientState, DataSource};
use super::server::{aggregate_gradients, ServerState};
use super::{EmaTarget, FedConfig, FedError};
use crate::nn::{self, ema_update, NetworkSpec, ParamSet};
use crate::rng::{domain, substream};

/// Per-client numbers from one round.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientRoundStats {
    pub client_id: usize,
    pub epsilon: f64,
    /// Support loss at the client's adapted parameters.
    pub support_loss: f64,
    /// Query loss at the client's adapted parameters.
    pub query_loss: f64,
    /// Norm of the uploaded update.
    pub grad_norm: f64,
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub struct RoundReport {
    /// 1-based round index.
    pub round: usize,
    pub lr: f64,
    /// Sampled clients in ascending id.
    pub clients: Vec<ClientRoundStats>,
    pub elapsed: Duration,
}

impl RoundReport {
    pub fn weights(&self) -> Vec<f64> {
        self.clients.iter().map(|c| c.weight).collect()
    }

    /// Mean of support plus query loss over sampled clients.
    pub fn mean_total_loss(&self) -> f64 {
        self.clients.iter().map(|c| c.support_loss + c.query_loss).sum::<f64>() / self.clients.len() as f64
    }
}

/// Result of a whole federation.
#[derive(Debug, Clone)]
pub struct FederationOutcome {
    pub server: ServerState,
    pub reports: Vec<RoundReport>,
    /// Round at which the global model stopped being finite.
    pub diverged_at: Option<usize>,
    /// Fine-tuned parameters per client, in client order; empty after divergence.
    pub adapted: Vec<ParamSet>,
}

fn sample_clients(k: usize, m: usize, seed: u64, round: usize) -> Vec<usize> {
    let mut rng = substream(seed, &[domain::SAMPLING, round as u64]);
    let mut picked = rand::seq::index::sample(&mut rng, k, m).into_vec();
    picked.sort_unstable();
    picked
}

fn secret_reads(clients: &[ClientState]) -> u64 {
    clients.iter().map(ClientState::secret_reads).sum()
}

fn client_error(id: usize) -> impl Fn(FedError) -> FedError {
    move |e| match e {
        FedError::Nn(source) => FedError::Client { client: id, source },
        other => other,
    }
}

/// What one client computes in a round.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpload {
    /// Adapted parameters `θ_i`.
    pub params: ParamSet,
    /// Query gradient at `θ_i`, the only thing sent to the server.
    pub grad: ParamSet,
    pub support_loss: f64,
    pub query_loss: f64,
}

/// Client side of round `round`: inner update on the support split, optional
/// client-side averaging, then the query gradient. Touches only the
/// federation splits.
pub fn client_update(
    spec: &NetworkSpec,
    theta: &ParamSet,
    client: &ClientState,
    cfg: &FedConfig,
    seed: u64,
    round: usize,
) -> Result<ClientUpload, FedError> {
    let wrap = client_error(client.id);
    let mut rng = substream(seed, &[domain::CLIENT, client.id as u64, round as u64]);
    let data = &client.federation;
    let mut params = client_inner_update(
        spec,
        theta,
        &data.support,
        cfg.inner_lr,
        cfg.inner_steps,
        cfg.batch_size,
        &mut rng,
    )
    .map_err(&wrap)?;
    if cfg.ema_target == EmaTarget::Client {
        let prev = client.params.as_ref().unwrap_or(theta);
        params = ema_update(&params, prev, cfg.ema_zeta).map_err(|e| wrap(e.into()))?;
    }
    let support_loss =
        nn::loss(spec, &params, data.support.samples(), data.support.labels()).map_err(|e| wrap(e.into()))?;
    let (query_loss, grad) = client_query_grad(spec, &params, &data.query).map_err(&wrap)?;
    Ok(ClientUpload {
        params,
        grad,
        support_loss,
        query_loss,
    })
}

/// One communication round. Samples clients, runs their inner updates and
/// query gradients on the federation splits, takes the outer step and applies
/// the moving average. Fails with [`FedError::Diverged`] if any loss or the
/// new global model is not finite, and with [`FedError::SecretAccess`] if a
/// secret split was read.
pub fn run_round(
    spec: &NetworkSpec,
    server: &ServerState,
    clients: &mut [ClientState],
    cfg: &FedConfig,
    seed: u64,
) -> Result<(ServerState, RoundReport), FedError> {
    let start = Instant::now();
    let reads_before = secret_reads(clients);
    let t = server.round + 1;
    if t > server.total_rounds {
        return Err(FedError::InvalidConfig(format!(
            "all {} rounds already ran",
            server.total_rounds
        )));
    }
    if server.m == 0 || server.m > clients.len() {
        return Err(FedError::InvalidConfig(format!(
            "cannot sample {} of {} clients",
            server.m,
            clients.len()
        )));
    }
    let picked = sample_clients(clients.len(), server.m, seed, t);
    let theta = &server.params;

    let uploads: Vec<ClientUpload> = picked
        .par_iter()
        .map(|&i| client_update(spec, theta, &clients[i], cfg, seed, t))
        .collect::<Result<_, FedError>>()?;

    if uploads
        .iter()
        .any(|u| !(u.support_loss.is_finite() && u.query_loss.is_finite()))
    {
        return Err(FedError::Diverged { round: t });
    }
    let contributions: Vec<_> = picked
        .iter()
        .zip(&uploads)
        .map(|(&i, u)| (clients[i].id, &u.grad, clients[i].epsilon))
        .collect();
    let (g, weights) = aggregate_gradients(&contributions, cfg.aggregation, server.rho)?;
    let lr = server.schedule.at(t, server.total_rounds)?;
    let (optim, stepped) = server.optim.step(theta, &g, lr)?;
    let params = match cfg.ema_target {
        EmaTarget::Global => ema_update(&stepped, theta, server.zeta)?,
        EmaTarget::Client => stepped,
    };
    if !params.is_finite() {
        return Err(FedError::Diverged { round: t });
    }

    let mut stats = Vec::with_capacity(picked.len());
    for ((&i, u), (_, w)) in picked.iter().zip(uploads).zip(&weights) {
        stats.push(ClientRoundStats {
            client_id: clients[i].id,
            epsilon: clients[i].epsilon,
            support_loss: u.support_loss,
            query_loss: u.query_loss,
            grad_norm: u.grad.l2_norm(),
            weight: *w,
        });
        clients[i].params = Some(u.params);
    }
    stats.sort_by_key(|s| s.client_id);

    let reads = secret_reads(clients) - reads_before;
    if reads != 0 {
        return Err(FedError::SecretAccess { round: t, reads });
    }
    let next = ServerState {
        params,
        round: t,
        optim,
        ..server.clone()
    };
    Ok((
        next,
        RoundReport {
            round: t,
            lr,
            clients: stats,
            elapsed: start.elapsed(),
        },
    ))
}

fn check_sources(clients: &[ClientState], cfg: &FedConfig) -> Result<(), FedError> {
    if clients.is_empty() {
        return Err(FedError::EmptyData("client list".into()));
    }
    if !cfg.federate_on_secret {
        if let Some(c) = clients.iter().find(|c| c.federation.source == DataSource::Secret) {
            return Err(FedError::InvalidConfig(format!(
                "client {} federates on secret data but federate_on_secret is off",
                c.id
            )));
        }
    }
    Ok(())
}

fn adapt_all(
    spec: &NetworkSpec,
    theta: &ParamSet,
    clients: &[ClientState],
    cfg: &FedConfig,
) -> Result<Vec<ParamSet>, FedError> {
    clients
        .iter()
        .map(|c| {
            local_adapt(
                spec,
                theta,
                c.secret_train(),
                cfg.finetune_steps,
                cfg.finetune_lr,
                cfg.finetune_optimizer,
            )
            .map_err(client_error(c.id))
        })
        .collect()
}

/// Meta-learning federation for `cfg.rounds` rounds followed by per-client
/// fine-tuning. `on_round` sees the server after every round (evaluation hooks
/// live there). Divergence ends the run early and is reported in the outcome.
pub fn run_pppfl(
    spec: &NetworkSpec,
    init: ParamSet,
    clients: &mut [ClientState],
    cfg: &FedConfig,
    seed: u64,
    mut on_round: impl FnMut(&ServerState, &RoundReport, &[ClientState]) -> Result<(), FedError>,
) -> Result<FederationOutcome, FedError> {
    check_sources(clients, cfg)?;
    init.check_spec(spec)?;
    let mut server = ServerState::new(init, cfg, clients.len())?;
    let mut reports = Vec::with_capacity(cfg.rounds);
    for _ in 0..cfg.rounds {
        match run_round(spec, &server, clients, cfg, seed) {
            Ok((next, report)) => {
                on_round(&next, &report, clients)?;
                server = next;
                reports.push(report);
            }
            Err(FedError::Diverged { round }) => {
                return Ok(FederationOutcome {
                    server,
                    reports,
                    diverged_at: Some(round),
                    adapted: Vec::new(),
                })
            }
            Err(e) => return Err(e),
        }
    }
    let adapted = adapt_all(spec, &server.params, clients, cfg)?;
    Ok(FederationOutcome {
        server,
        reports,
        diverged_at: None,
        adapted,
    })
}

/// FedAvg: sampled clients train `cfg.fedavg_epochs` local epochs on their
/// support set, then the server takes the size-weighted parameter average.
/// Fine-tuning and hooks as in [`run_pppfl`].
pub fn run_fedavg(
    spec: &NetworkSpec,
    init: ParamSet,
    clients: &mut [ClientState],
    cfg: &FedConfig,
    seed: u64,
    mut on_round: impl FnMut(&ServerState, &RoundReport, &[ClientState]) -> Result<(), FedError>,
) -> Result<FederationOutcome, FedError> {
    check_sources(clients, cfg)?;
    init.check_spec(spec)?;
    let mut server = ServerState::new(init, cfg, clients.len())?;
    let mut reports = Vec::with_capacity(cfg.rounds);
    for t in 1..=cfg.rounds {
        let start = Instant::now();
        let reads_before = secret_reads(clients);
        let picked = sample_clients(clients.len(), server.m, seed, t);
        let theta = &server.params;
        let locals: Vec<(ParamSet, f64, f64)> = picked
            .par_iter()
            .map(|&i| {
                let c = &clients[i];
                let wrap = client_error(c.id);
                let mut rng = substream(seed, &[domain::CLIENT, c.id as u64, t as u64]);
                let s = &c.federation.support;
                let p = local_train(
                    spec,
                    theta,
                    s,
                    cfg.fedavg_epochs,
                    cfg.fedavg_lr,
                    cfg.fedavg_optimizer,
                    cfg.batch_size,
                    &mut rng,
                )
                .map_err(&wrap)?;
                let sl = nn::loss(spec, &p, s.samples(), s.labels()).map_err(|e| wrap(e.into()))?;
                let q = &c.federation.query;
                let ql = nn::loss(spec, &p, q.samples(), q.labels()).map_err(|e| wrap(e.into()))?;
                Ok((p, sl, ql))
            })
            .collect::<Result<_, FedError>>()?;
        let sizes: Vec<f64> = picked
            .iter()
            .map(|&i| clients[i].federation.support.len() as f64)
            .collect();
        let n: f64 = sizes.iter().sum();
        let mut avg = theta.zeros_like();
        for ((p, _, _), s) in locals.iter().zip(&sizes) {
            avg.add_scaled(p, s / n)?;
        }
        let diverged = !avg.is_finite() || locals.iter().any(|l| !(l.1.is_finite() && l.2.is_finite()));
        if diverged {
            return Ok(FederationOutcome {
                server,
                reports,
                diverged_at: Some(t),
                adapted: Vec::new(),
            });
        }
        let mut stats = Vec::with_capacity(picked.len());
        for ((&i, (p, sl, ql)), s) in picked.iter().zip(locals).zip(&sizes) {
            let mut delta = p.clone();
            delta.add_scaled(theta, -1.0)?;
            stats.push(ClientRoundStats {
                client_id: clients[i].id,
                epsilon: clients[i].epsilon,
                support_loss: sl,
                query_loss: ql,
                grad_norm: delta.l2_norm(),
                weight: s / n,
            });
            clients[i].params = Some(p);
        }
        let reads = secret_reads(clients) - reads_before;
        if reads != 0 {
            return Err(FedError::SecretAccess { round: t, reads });
        }
        server = ServerState {
            params: avg,
            round: t,
            ..server
        };
        let report = RoundReport {
            round: t,
            lr: cfg.fedavg_lr,
            clients: stats,
            elapsed: start.elapsed(),
        };
        on_round(&server, &report, clients)?;
        reports.push(report);
    }
    let adapted = adapt_all(spec, &server.params, clients, cfg)?;
    Ok(FederationOutcome {
        server,
        reports,
        diverged_at: None,
        adapted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gaussian_blobs, LabeledDataset};
    use crate::fed::{client::FederationData, client::SecretSplits, Aggregation};
    use crate::nn::{LrSchedule, OptimizerKind};

    fn client(id: usize, eps: f64, seed: u64) -> ClientState {
        let ds = gaussian_blobs(60, 3, 4, 0.4, seed).unwrap();
        let part = |r: std::ops::Range<usize>| -> LabeledDataset { ds.subset(&r.collect::<Vec<_>>()) };
        ClientState::new(
            id,
            eps,
            FederationData {
                support: part(0..20),
                query: part(20..30),
                source: DataSource::Synthetic,
            },
            SecretSplits {
                train: part(30..50),
                val: part(50..60),
            },
        )
        .unwrap()
    }

    fn setup() -> (NetworkSpec, ParamSet, Vec<ClientState>, FedConfig) {
        let spec = NetworkSpec::mlp(&[4, 8, 3], true).unwrap();
        let init = ParamSet::init(&spec, &mut substream(9, &[]));
        let clients = (0..4).map(|i| client(i, 1.0 + i as f64, 100 + i as u64)).collect();
        let cfg = FedConfig {
            rounds: 6,
            clients_per_round: Some(3),
            inner_lr: 0.05,
            batch_size: 8,
            outer_lr: LrSchedule::Cosine {
                cycles: 2,
                lr_max: 0.01,
                lr_min: 0.001,
            },
            finetune_steps: 3,
            ..FedConfig::default()
        };
        (spec, init, clients, cfg)
    }

    #[test]
    fn rounds_are_deterministic_and_report_weights() {
        let (spec, init, mut a, cfg) = setup();
        let (_, _, mut b, _) = setup();
        let server = ServerState::new(init, &cfg, 4).unwrap();
        let (s1, r1) = run_round(&spec, &server, &mut a, &cfg, 7).unwrap();
        let (s2, r2) = run_round(&spec, &server, &mut b, &cfg, 7).unwrap();
        assert_eq!(s1, s2);
        assert_eq!(r1.clients, r2.clients);
        assert_eq!(r1.clients.len(), 3);
        assert!((r1.weights().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert_eq!(s1.round, 1);
    }

    #[test]
    fn zero_momentum_freezes_global_model() {
        let (spec, init, mut clients, cfg) = setup();
        let cfg = FedConfig { ema_zeta: 0.0, ..cfg };
        let server = ServerState::new(init.clone(), &cfg, 4).unwrap();
        let (next, _) = run_round(&spec, &server, &mut clients, &cfg, 1).unwrap();
        assert_eq!(next.params, init);
    }

    #[test]
    fn single_client_round_is_manual_composition() {
        let (spec, init, mut clients, _) = setup();
        let mut one = vec![clients.remove(0)];
        let cfg = FedConfig {
            rounds: 1,
            inner_steps: 1,
            batch_size: 1000,
            inner_lr: 0.1,
            outer_lr: LrSchedule::Constant { lr: 0.2 },
            outer_optimizer: OptimizerKind::Sgd,
            ema_zeta: 1.0,
            ..FedConfig::default()
        };
        let server = ServerState::new(init.clone(), &cfg, 1).unwrap();
        let (next, _) = run_round(&spec, &server, &mut one, &cfg, 3).unwrap();
        let s = &one[0].federation.support;
        let q = &one[0].federation.query;
        let (_, g0) = nn::loss_and_grad(&spec, &init, s.samples(), s.labels()).unwrap();
        let adapted = nn::sgd_step(&init, &g0, 0.1).unwrap();
        let (_, gq) = nn::loss_and_grad(&spec, &adapted, q.samples(), q.labels()).unwrap();
        assert_eq!(next.params, nn::sgd_step(&init, &gq, 0.2).unwrap());
    }

    #[test]
    fn secret_reads_inside_a_round_are_rejected() {
        let (spec, init, mut clients, cfg) = setup();
        let cfg = FedConfig { rounds: 2, ..cfg };
        let out = run_pppfl(&spec, init, &mut clients, &cfg, 0, |_, _, cs| {
            let _ = cs[0].secret_val();
            Ok(())
        })
        .unwrap();
        assert_eq!(out.reports.len(), 2);
        assert_eq!(out.adapted.len(), 4);
        let (spec, init, mut clients, cfg) = setup();
        clients[1].federation.source = DataSource::Secret;
        assert!(matches!(
            run_pppfl(&spec, init, &mut clients, &cfg, 0, |_, _, _| Ok(())),
            Err(FedError::InvalidConfig(_))
        ));
    }

    #[test]
    fn fedmeta_equals_pppfl_under_equal_budgets() {
        let (spec, init, mut a, cfg) = setup();
        let (_, _, mut b, _) = setup();
        for c in a.iter_mut().chain(b.iter_mut()) {
            c.epsilon = 2.0;
        }
        let meta = cfg.fedmeta();
        let same = FedConfig {
            aggregation: Aggregation::EpsWeighted,
            ..meta.clone()
        };
        let x = run_pppfl(&spec, init.clone(), &mut a, &meta, 5, |_, _, _| Ok(())).unwrap();
        let y = run_pppfl(&spec, init, &mut b, &same, 5, |_, _, _| Ok(())).unwrap();
        assert_eq!(x.server.params, y.server.params);
        assert_eq!(x.adapted, y.adapted);
    }

    #[test]
    fn fedavg_with_one_client_is_local_training() {
        let (spec, init, mut clients, cfg) = setup();
        let mut one = vec![clients.remove(2)];
        let cfg = FedConfig {
            rounds: 2,
            clients_per_round: None,
            ..cfg
        };
        let out = run_fedavg(&spec, init.clone(), &mut one, &cfg, 4, |_, _, _| Ok(())).unwrap();
        let mut p = init;
        for t in 1..=2u64 {
            let mut rng = substream(4, &[domain::CLIENT, one[0].id as u64, t]);
            p = local_train(
                &spec,
                &p,
                &one[0].federation.support,
                1,
                cfg.fedavg_lr,
                cfg.fedavg_optimizer,
                8,
                &mut rng,
            )
            .unwrap();
        }
        // a single size weight of 1 multiplies exactly
        assert_eq!(out.server.params, p);
        assert_eq!(out.reports[0].clients[0].weight, 1.0);
    }

    #[test]
    fn non_finite_model_ends_the_run() {
        let (spec, init, mut clients, cfg) = setup();
        let poisoned = init.map(|v| v * f64::INFINITY);
        let out = run_pppfl(&spec, poisoned, &mut clients, &cfg, 0, |_, _, _| Ok(())).unwrap();
        assert_eq!(out.diverged_at, Some(1));
        assert!(out.reports.is_empty() && out.adapted.is_empty());
    }
}
