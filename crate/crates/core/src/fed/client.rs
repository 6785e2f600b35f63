//! Client-side state and updates.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::seq::SliceRandom;

use super::FedError;
use crate::data::LabeledDataset;
use crate::nn::{self, GradSet, NetworkSpec, NnError, OptimState, OptimizerKind, ParamSet};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Origin of a client's federation splits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataSource {
    Synthetic,
    /// Secret data federated directly, for the ablation baseline.
    Secret,
}

/// Support and query splits the client federates on.
#[derive(Debug, Clone)]
pub struct FederationData {
    pub support: LabeledDataset,
    pub query: LabeledDataset,
    pub source: DataSource,
}

/// The client's private training and validation splits.
#[derive(Debug, Clone)]
pub struct SecretSplits {
    pub train: LabeledDataset,
    pub val: LabeledDataset,
}

/// One participant. Secret splits are only reachable through counting
/// accessors.
#[derive(Debug)]
pub struct ClientState {
    pub id: usize,
    /// Privacy budget the client's synthetic data was produced under.
    pub epsilon: f64,
    /// Parameters after the client's most recent federation update.
    pub params: Option<ParamSet>,
    pub federation: FederationData,
    secret: SecretSplits,
    secret_reads: AtomicU64,
}

impl ClientState {
    pub fn new(id: usize, epsilon: f64, federation: FederationData, secret: SecretSplits) -> Result<Self, FedError> {
        if !epsilon.is_finite() {
            return Err(FedError::InvalidConfig(format!(
                "client {id}: budget must be finite, got {epsilon}"
            )));
        }
        for (what, ds) in [
            ("support set", &federation.support),
            ("query set", &federation.query),
            ("secret training split", &secret.train),
            ("secret validation split", &secret.val),
        ] {
            if ds.is_empty() {
                return Err(FedError::EmptyData(format!("client {id} {what}")));
            }
        }
        Ok(Self {
            id,
            epsilon,
            params: None,
            federation,
            secret,
            secret_reads: AtomicU64::new(0),
        })
    }

    pub fn secret_train(&self) -> &LabeledDataset {
        self.secret_reads.fetch_add(1, Ordering::Relaxed);
        &self.secret.train
    }

    pub fn secret_val(&self) -> &LabeledDataset {
        self.secret_reads.fetch_add(1, Ordering::Relaxed);
        &self.secret.val
    }

    /// Number of secret-split reads so far.
    pub fn secret_reads(&self) -> u64 {
        self.secret_reads.load(Ordering::Relaxed)
    }
}

fn ensure_non_empty(ds: &LabeledDataset, what: &str) -> Result<(), FedError> {
    if ds.is_empty() {
        return Err(FedError::EmptyData(what.into()));
    }
    Ok(())
}

fn batch(ds: &LabeledDataset, rows: &[usize]) -> (Tensor, Vec<usize>) {
    (
        ds.samples().select_rows(rows),
        rows.iter().map(|&r| ds.labels()[r]).collect(),
    )
}

/// `n_steps` SGD steps at rate `alpha` on the support cross-entropy. Each step
/// uses `batch_size` rows drawn without replacement, or the whole set when it
/// is no larger than the batch.
pub fn client_inner_update(
    spec: &NetworkSpec,
    theta: &ParamSet,
    support: &LabeledDataset,
    alpha: f64,
    n_steps: usize,
    batch_size: usize,
    rng: &mut Rng,
) -> Result<ParamSet, FedError> {
    ensure_non_empty(support, "support set")?;
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(NnError::InvalidArgument(format!("inner rate must be positive, got {alpha}")).into());
    }
    let n = support.len();
    let mut theta = theta.clone();
    for _ in 0..n_steps {
        let (x, y) = if batch_size >= n {
            (support.samples().clone(), support.labels().to_vec())
        } else {
            let mut rows = rand::seq::index::sample(rng, n, batch_size).into_vec();
            rows.sort_unstable();
            batch(support, &rows)
        };
        let (_, g) = nn::loss_and_grad(spec, &theta, &x, &y)?;
        theta = nn::sgd_step(&theta, &g, alpha)?;
    }
    Ok(theta)
}

/// Query cross-entropy and its exact gradient at the adapted parameters.
pub fn client_query_grad(
    spec: &NetworkSpec,
    theta_i: &ParamSet,
    query: &LabeledDataset,
) -> Result<(f64, GradSet), FedError> {
    ensure_non_empty(query, "query set")?;
    Ok(nn::loss_and_grad(spec, theta_i, query.samples(), query.labels())?)
}

/// `gamma_steps` full-batch steps on a client's secret training split with a
/// fresh optimizer state.
pub fn local_adapt(
    spec: &NetworkSpec,
    theta: &ParamSet,
    secret_train: &LabeledDataset,
    gamma_steps: usize,
    lr: f64,
    optimizer: OptimizerKind,
) -> Result<ParamSet, FedError> {
    ensure_non_empty(secret_train, "secret training split")?;
    let mut state = OptimState::new(optimizer, theta);
    let mut theta = theta.clone();
    for _ in 0..gamma_steps {
        let (_, g) = nn::loss_and_grad(spec, &theta, secret_train.samples(), secret_train.labels())?;
        (state, theta) = state.step(&theta, &g, lr)?;
    }
    Ok(theta)
}

/// `epochs` passes of shuffled mini-batch training with a fresh optimizer.
#[allow(clippy::too_many_arguments)]
pub fn local_train(
    spec: &NetworkSpec,
    theta: &ParamSet,
    data: &LabeledDataset,
    epochs: usize,
    lr: f64,
    optimizer: OptimizerKind,
    batch_size: usize,
    rng: &mut Rng,
) -> Result<ParamSet, FedError> {
    ensure_non_empty(data, "training set")?;
    if batch_size == 0 {
        return Err(FedError::InvalidConfig("batch_size must be positive".into()));
    }
    let mut state = OptimState::new(optimizer, theta);
    let mut theta = theta.clone();
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..epochs {
        order.shuffle(rng);
        for rows in order.chunks(batch_size) {
            let (x, y) = batch(data, rows);
            let (_, g) = nn::loss_and_grad(spec, &theta, &x, &y)?;
            (state, theta) = state.step(&theta, &g, lr)?;
        }
    }
    Ok(theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gaussian_blobs;
    use crate::rng::substream;

    fn toy() -> (NetworkSpec, ParamSet, LabeledDataset) {
        let ds = gaussian_blobs(40, 2, 3, 0.3, 5).unwrap();
        let spec = NetworkSpec::mlp(&[3, 2], true).unwrap();
        let p = ParamSet::init(&spec, &mut substream(1, &[]));
        (spec, p, ds)
    }

    #[test]
    fn zero_steps_is_identity_and_one_full_step_is_sgd() {
        let (spec, p, ds) = toy();
        let mut rng = substream(2, &[]);
        assert_eq!(client_inner_update(&spec, &p, &ds, 0.1, 0, 64, &mut rng).unwrap(), p);
        let one = client_inner_update(&spec, &p, &ds, 0.1, 1, 64, &mut rng).unwrap();
        let (_, g) = nn::loss_and_grad(&spec, &p, ds.samples(), ds.labels()).unwrap();
        assert_eq!(one, nn::sgd_step(&p, &g, 0.1).unwrap());
        assert_eq!(local_adapt(&spec, &p, &ds, 0, 0.1, OptimizerKind::Sgd).unwrap(), p);
        let two = local_adapt(&spec, &p, &ds, 2, 0.1, OptimizerKind::Sgd).unwrap();
        let (_, g1) = nn::loss_and_grad(&spec, &one, ds.samples(), ds.labels()).unwrap();
        assert_eq!(two, nn::sgd_step(&one, &g1, 0.1).unwrap());
    }

    #[test]
    fn minibatch_steps_are_seeded() {
        let (spec, p, ds) = toy();
        let a = client_inner_update(&spec, &p, &ds, 0.1, 3, 8, &mut substream(3, &[])).unwrap();
        let b = client_inner_update(&spec, &p, &ds, 0.1, 3, 8, &mut substream(3, &[])).unwrap();
        let c = client_inner_update(&spec, &p, &ds, 0.1, 3, 8, &mut substream(4, &[])).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn secret_reads_are_counted() {
        let (_, _, ds) = toy();
        let fed = FederationData {
            support: ds.clone(),
            query: ds.clone(),
            source: DataSource::Synthetic,
        };
        let secret = SecretSplits {
            train: ds.clone(),
            val: ds.clone(),
        };
        let c = ClientState::new(0, 1.0, fed.clone(), secret.clone()).unwrap();
        assert_eq!(c.secret_reads(), 0);
        let _ = c.federation.support.len();
        assert_eq!(c.secret_reads(), 0);
        let _ = c.secret_train();
        let _ = c.secret_val();
        assert_eq!(c.secret_reads(), 2);
        assert!(ClientState::new(0, f64::INFINITY, fed, secret).is_err());
    }
}
