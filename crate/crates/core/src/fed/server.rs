//! Server state and gradient aggregation.

use super::{Aggregation, FedConfig, FedError};
use crate::nn::{self, GradSet, LrSchedule, NnError, OptimState, ParamSet};

/// Softmax of `ε/ρ`, computed after subtracting the maximum.
pub fn softmax_weights(epsilons: &[f64], rho: f64) -> Result<Vec<f64>, FedError> {
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(FedError::InvalidConfig(format!("rho must be positive, got {rho}")));
    }
    if epsilons.is_empty() {
        return Err(FedError::EmptyData("budget list".into()));
    }
    if let Some(e) = epsilons.iter().find(|e| !e.is_finite()) {
        return Err(FedError::InvalidConfig(format!("budgets must be finite, got {e}")));
    }
    let max = epsilons.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = epsilons.iter().map(|e| ((e - max) / rho).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Weighted gradient `Σ w_c·g_c` and the weights. Contributions are
/// `(client id, gradient, ε)`; summation runs in ascending client id, so the
/// result does not depend on input order.
pub fn aggregate_gradients(
    contributions: &[(usize, &GradSet, f64)],
    mode: Aggregation,
    rho: f64,
) -> Result<(GradSet, Vec<(usize, f64)>), FedError> {
    if contributions.is_empty() {
        return Err(FedError::EmptyData("contribution list".into()));
    }
    let mut sorted: Vec<&(usize, &GradSet, f64)> = contributions.iter().collect();
    sorted.sort_by_key(|c| c.0);
    if sorted.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(FedError::InvalidConfig("duplicate client id in contributions".into()));
    }
    let weights = match mode {
        Aggregation::Uniform => vec![1.0 / sorted.len() as f64; sorted.len()],
        Aggregation::EpsWeighted => softmax_weights(&sorted.iter().map(|c| c.2).collect::<Vec<_>>(), rho)?,
    };
    let mut total = sorted[0].1.zeros_like();
    for (c, &w) in sorted.iter().zip(&weights) {
        total.add_scaled(c.1, w)?;
    }
    Ok((total, sorted.iter().map(|c| c.0).zip(weights).collect()))
}

/// One plain outer step `θ − lr·Σ w_c·g_c`.
pub fn server_aggregate(
    theta: &ParamSet,
    contributions: &[(usize, &GradSet, f64)],
    mode: Aggregation,
    lr: f64,
    rho: f64,
) -> Result<ParamSet, FedError> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(NnError::InvalidArgument(format!("outer rate must be positive, got {lr}")).into());
    }
    let (g, _) = aggregate_gradients(contributions, mode, rho)?;
    Ok(nn::sgd_step(theta, &g, lr)?)
}

/// Global model and everything the server carries between rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct ServerState {
    pub params: ParamSet,
    /// Rounds completed so far.
    pub round: usize,
    pub total_rounds: usize,
    pub schedule: LrSchedule,
    pub optim: OptimState,
    pub zeta: f64,
    pub rho: f64,
    /// Clients sampled per round.
    pub m: usize,
}

impl ServerState {
    pub fn new(params: ParamSet, cfg: &FedConfig, k: usize) -> Result<Self, FedError> {
        cfg.validate(k)?;
        Ok(Self {
            optim: OptimState::new(cfg.outer_optimizer, &params),
            params,
            round: 0,
            total_rounds: cfg.rounds,
            schedule: cfg.outer_lr,
            zeta: cfg.ema_zeta,
            rho: cfg.rho,
            m: cfg.sampled(k),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::NetworkSpec;
    use crate::rng::substream;

    #[test]
    fn weights_hand_values() {
        let w = softmax_weights(&[1.0, 2.0], 1.0).unwrap();
        assert!((w[0] - 0.26894).abs() < 1e-5 && (w[1] - 0.73106).abs() < 1e-5);
        assert_eq!(softmax_weights(&[3.0; 4], 0.5).unwrap(), vec![0.25; 4]);
        let hot = softmax_weights(&[1.0, 2.0], 1000.0).unwrap();
        assert!(hot.iter().all(|w| (w - 0.5).abs() < 1e-3));
        assert!(softmax_weights(&[1.0], 0.0).is_err());
        assert!(softmax_weights(&[], 1.0).is_err());
        let big = softmax_weights(&[1e6, 1e6 + 1.0], 1.0).unwrap();
        assert!((big[1] - 0.73106).abs() < 1e-5);
    }

    #[test]
    fn equal_budgets_match_uniform_bitwise() {
        let spec = NetworkSpec::mlp(&[3, 4, 2], true).unwrap();
        let mut rng = substream(0, &[]);
        let theta = ParamSet::init(&spec, &mut rng);
        let gs: Vec<ParamSet> = (0..3).map(|_| ParamSet::init(&spec, &mut rng)).collect();
        let contrib: Vec<_> = gs.iter().enumerate().map(|(i, g)| (i, g, 4.0)).collect();
        let u = server_aggregate(&theta, &contrib, Aggregation::Uniform, 0.1, 1.0).unwrap();
        let w = server_aggregate(&theta, &contrib, Aggregation::EpsWeighted, 0.1, 1.0).unwrap();
        assert_eq!(u.to_flat(), w.to_flat());
        let mut shuffled = contrib.clone();
        shuffled.reverse();
        let r = server_aggregate(&theta, &shuffled, Aggregation::Uniform, 0.1, 1.0).unwrap();
        assert_eq!(r, u);
    }
}
