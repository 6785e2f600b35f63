//! Federated meta-learning over synthetic client data.
//!
//! Every round the server samples `m` clients and sends them the global
//! initialization `θ`. Each client adapts it with a few SGD steps on its
//! support set, then uploads the query-set gradient at the adapted point
//! (first-order meta-gradient). The server combines the gradients, either
//! uniformly or with softmax weights over the clients' privacy budgets, takes
//! an outer step at a cosine-annealed rate and smooths the result with an
//! exponential moving average. After federation each client fine-tunes the
//! initialization on its own secret training split.
//!
//! The federation loop only touches the federation splits. Secret splits sit
//! behind audited accessors and [`run_round`] fails if any were read.

mod client;
mod io;
mod round;
mod server;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{LrSchedule, NnError, OptimizerKind};

pub use client::{
    client_inner_update, client_query_grad, local_adapt, local_train, ClientState, DataSource, FederationData,
    SecretSplits,
};
pub use io::{load_model, save_model, write_round_reports, ModelManifest, TensorEntry};
pub use round::{
    client_update, run_fedavg, run_pppfl, run_round, ClientRoundStats, ClientUpload, FederationOutcome, RoundReport,
};
pub use server::{aggregate_gradients, server_aggregate, softmax_weights, ServerState};

#[derive(Debug, Error)]
pub enum FedError {
    #[error("invalid federation config: {0}")]
    InvalidConfig(String),
    #[error("{0} is empty")]
    EmptyData(String),
    #[error("client {client}: {source}")]
    Client {
        client: usize,
        #[source]
        source: NnError,
    },
    #[error("training diverged at round {round}")]
    Diverged { round: usize },
    #[error("round {round} read secret splits {reads} times")]
    SecretAccess { round: usize, reads: u64 },
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// How client gradients are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Every sampled client weighs `1/m`.
    Uniform,
    /// Softmax over `ε/ρ` of the sampled clients.
    EpsWeighted,
}

/// Where the parameter moving average is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmaTarget {
    /// `θ ← ζ·θ_new + (1−ζ)·θ_prev` after each outer step.
    Global,
    /// Each client averages its adapted parameters with its previous round's.
    Client,
}

/// Federation hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FedConfig {
    /// Communication rounds `T`.
    pub rounds: usize,
    /// Clients sampled per round; `None` means all of them.
    pub clients_per_round: Option<usize>,
    /// Inner SGD rate `α*`.
    pub inner_lr: f64,
    pub inner_steps: usize,
    pub batch_size: usize,
    /// Outer rate `β*` per round.
    pub outer_lr: LrSchedule,
    pub outer_optimizer: OptimizerKind,
    pub aggregation: Aggregation,
    /// Softmax temperature `ρ` for budget weighting.
    pub rho: f64,
    /// EMA momentum `ζ`; 1 disables smoothing.
    pub ema_zeta: f64,
    pub ema_target: EmaTarget,
    /// Fine-tuning steps `γ` on the secret training split.
    pub finetune_steps: usize,
    pub finetune_lr: f64,
    pub finetune_optimizer: OptimizerKind,
    /// Local epochs per FedAvg round.
    pub fedavg_epochs: usize,
    pub fedavg_lr: f64,
    pub fedavg_optimizer: OptimizerKind,
    /// Permits federation splits drawn from secret data (ablation only).
    pub federate_on_secret: bool,
}

impl Default for FedConfig {
    fn default() -> Self {
        Self {
            rounds: 30,
            clients_per_round: None,
            inner_lr: 1e-4,
            inner_steps: 5,
            batch_size: 64,
            outer_lr: LrSchedule::Cosine {
                cycles: 3,
                lr_max: 3e-4,
                lr_min: 3e-5,
            },
            outer_optimizer: OptimizerKind::Adam,
            aggregation: Aggregation::EpsWeighted,
            rho: 1.0,
            ema_zeta: 0.95,
            ema_target: EmaTarget::Global,
            finetune_steps: 20,
            finetune_lr: 1e-3,
            finetune_optimizer: OptimizerKind::Adam,
            fedavg_epochs: 1,
            fedavg_lr: 1e-3,
            fedavg_optimizer: OptimizerKind::Adam,
            federate_on_secret: false,
        }
    }
}

impl FedConfig {
    /// FedMeta: uniform weights, no smoothing, constant outer rate.
    pub fn fedmeta(&self) -> Self {
        let lr = match self.outer_lr {
            LrSchedule::Constant { lr } => lr,
            LrSchedule::Cosine { lr_max, .. } => lr_max,
        };
        Self {
            aggregation: Aggregation::Uniform,
            ema_zeta: 1.0,
            outer_lr: LrSchedule::Constant { lr },
            ..self.clone()
        }
    }

    /// Number of clients sampled per round out of `k`.
    pub fn sampled(&self, k: usize) -> usize {
        self.clients_per_round.unwrap_or(k)
    }

    pub fn validate(&self, k: usize) -> Result<(), FedError> {
        let bad = |m: String| Err(FedError::InvalidConfig(m));
        let m = self.sampled(k);
        if k == 0 || m == 0 || m > k {
            return bad(format!("need 1 ≤ m ≤ K, got m = {m}, K = {k}"));
        }
        if self.rounds == 0 {
            return bad("rounds must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return bad(format!("rho must be positive, got {}", self.rho));
        }
        if !(0.0..=1.0).contains(&self.ema_zeta) {
            return bad(format!("ema_zeta must lie in [0, 1], got {}", self.ema_zeta));
        }
        for (name, v) in [
            ("inner_lr", self.inner_lr),
            ("finetune_lr", self.finetune_lr),
            ("fedavg_lr", self.fedavg_lr),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        self.outer_lr.at(1, self.rounds)?;
        Ok(())
    }
}
