//! Rényi-DP accounting for the noisy vote aggregation.
//!
//! Each aggregation is a Gaussian mechanism on the sum of `k`-sparse sign
//! vectors. Replacing one teacher's vector moves the sum by at most `2√k` in
//! L2, which gives the per-order cost `s²λ/(2σ²)`. Costs add across
//! aggregations and are converted to `(ε, δ)` by taking the best order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DpError;

/// L2 sensitivity of summing top-`k` sign vectors when one teacher changes.
pub fn l2_sensitivity_topk(k: usize) -> Result<f64, DpError> {
    if k < 1 {
        return Err(DpError::InvalidArgument("k must be at least 1".into()));
    }
    Ok(2.0 * (k as f64).sqrt())
}

/// RDP of order `λ` for a Gaussian mechanism with sensitivity `s` and noise
/// scale `σ`.
pub fn rdp_gaussian(lambda: f64, sensitivity: f64, sigma: f64) -> Result<f64, DpError> {
    if lambda.is_nan() || lambda <= 1.0 {
        return Err(DpError::InvalidArgument(format!(
            "RDP order must exceed 1, got {lambda}"
        )));
    }
    if sensitivity.is_nan() || sensitivity < 0.0 {
        return Err(DpError::InvalidArgument(format!(
            "sensitivity must be non-negative, got {sensitivity}"
        )));
    }
    if sigma.is_nan() || sigma <= 0.0 {
        return Err(DpError::InfinitePrivacyLoss);
    }
    Ok(sensitivity * sensitivity * lambda / (2.0 * sigma * sigma))
}

/// `(λ, α)`-RDP implies `(α + ln(1/δ)/(λ−1), δ)`-DP.
pub fn rdp_to_dp(lambda: f64, alpha: f64, delta: f64) -> Result<f64, DpError> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(DpError::InvalidDelta(delta));
    }
    if lambda.is_nan() || lambda <= 1.0 {
        return Err(DpError::InvalidArgument(format!(
            "RDP order must exceed 1, got {lambda}"
        )));
    }
    if alpha.is_nan() || alpha < 0.0 {
        return Err(DpError::InvalidArgument(format!(
            "RDP value must be non-negative, got {alpha}"
        )));
    }
    Ok(alpha + (1.0 / delta).ln() / (lambda - 1.0))
}

/// An `(ε, δ)` pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    pub epsilon: f64,
    pub delta: f64,
}

impl PrivacyBudget {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self, DpError> {
        if epsilon.is_nan() || epsilon < 0.0 {
            return Err(DpError::InvalidArgument(format!(
                "ε must be non-negative, got {epsilon}"
            )));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(DpError::InvalidDelta(delta));
        }
        Ok(Self { epsilon, delta })
    }
}

/// The default order grid: 1.5, 2, 3, …, 64, 128, 256.
pub fn default_lambda_grid() -> Vec<f64> {
    let mut grid = vec![1.5];
    grid.extend((2..=64).map(f64::from));
    grid.extend([128.0, 256.0]);
    grid
}

/// Accumulated RDP per order, plus the target δ for conversion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdpAccountant {
    lambdas: Vec<f64>,
    totals: Vec<f64>,
    delta: f64,
}

impl RdpAccountant {
    pub fn new(lambdas: Vec<f64>, delta: f64) -> Result<Self, DpError> {
        if let Some(&l) = lambdas.iter().find(|l| l.is_nan() || **l <= 1.0) {
            return Err(DpError::InvalidArgument(format!("RDP order must exceed 1, got {l}")));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(DpError::InvalidDelta(delta));
        }
        let totals = vec![0.0; lambdas.len()];
        Ok(Self { lambdas, totals, delta })
    }

    pub fn with_default_grid(delta: f64) -> Result<Self, DpError> {
        Self::new(default_lambda_grid(), delta)
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn totals(&self) -> &[f64] {
        &self.totals
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Adds `steps · alpha_per_step(λ)` to every order's total.
    pub fn compose(&self, alpha_per_step: impl Fn(f64) -> Result<f64, DpError>, steps: u64) -> Result<Self, DpError> {
        let mut next = self.clone();
        if steps == 0 {
            return Ok(next);
        }
        for (l, t) in next.lambdas.iter().zip(next.totals.iter_mut()) {
            let a = alpha_per_step(*l)?;
            if a.is_nan() || a < 0.0 {
                return Err(DpError::InvalidArgument(format!("per-step RDP at λ={l} is {a}")));
            }
            *t += steps as f64 * a;
        }
        Ok(next)
    }

    /// Composes `steps` Gaussian aggregations of top-`k` sign votes.
    pub fn compose_topk_gaussian(&self, k: usize, sigma: f64, steps: u64) -> Result<Self, DpError> {
        let s = l2_sensitivity_topk(k)?;
        self.compose(|l| rdp_gaussian(l, s, sigma), steps)
    }

    /// Per-order sum of two accountants over the same grid and δ.
    pub fn merge(&self, other: &RdpAccountant) -> Result<Self, DpError> {
        if self.lambdas != other.lambdas || self.delta != other.delta {
            return Err(DpError::InvalidArgument("accountants use different grids or δ".into()));
        }
        let mut next = self.clone();
        for (a, b) in next.totals.iter_mut().zip(&other.totals) {
            *a += b;
        }
        Ok(next)
    }

    /// The tightest `(ε, δ)` over the order grid.
    pub fn best_epsilon(&self) -> Result<PrivacyBudget, DpError> {
        if self.lambdas.is_empty() {
            return Err(DpError::EmptyGrid);
        }
        let mut best = f64::INFINITY;
        for (&l, &a) in self.lambdas.iter().zip(&self.totals) {
            best = best.min(rdp_to_dp(l, a, self.delta)?);
        }
        Ok(PrivacyBudget {
            epsilon: best,
            delta: self.delta,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("accountant serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, DpError> {
        let acc: Self = serde_json::from_str(s).map_err(|e| DpError::Format(e.to_string()))?;
        if acc.lambdas.len() != acc.totals.len() {
            return Err(DpError::Format("grid and totals differ in length".into()));
        }
        Self::new(acc.lambdas.clone(), acc.delta)?;
        Ok(acc)
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_json())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sensitivity_values() {
        assert_eq!(l2_sensitivity_topk(1).unwrap(), 2.0);
        assert!((l2_sensitivity_topk(300).unwrap() - 34.64102).abs() < 1e-5);
        assert!(l2_sensitivity_topk(0).is_err());
    }

    #[test]
    fn gaussian_rdp_values() {
        assert_eq!(rdp_gaussian(2.0, 2.0, 1.0).unwrap(), 4.0);
        let s = l2_sensitivity_topk(300).unwrap();
        assert!((rdp_gaussian(2.0, s, 5000.0).unwrap() - 4.8e-5).abs() < 1e-15);
        for l in [1.5, 2.0, 64.0] {
            assert_eq!(rdp_gaussian(l, 0.0, 3.0).unwrap(), 0.0);
        }
        assert!(matches!(rdp_gaussian(2.0, 1.0, 0.0), Err(DpError::InfinitePrivacyLoss)));
        assert!(rdp_gaussian(1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn conversion_values() {
        assert!((rdp_to_dp(2.0, 0.1, 1e-5).unwrap() - 11.61293).abs() < 1e-4);
        assert!((rdp_to_dp(3.0, 0.25, 1.0 - 1e-12).unwrap() - 0.25).abs() < 1e-9);
        assert!((rdp_to_dp(101.0, 0.0, 1e-2).unwrap() - 0.046052).abs() < 1e-6);
        assert!(matches!(rdp_to_dp(2.0, 0.1, 0.0), Err(DpError::InvalidDelta(_))));
        assert!(matches!(rdp_to_dp(2.0, 0.1, 1.0), Err(DpError::InvalidDelta(_))));
    }

    #[test]
    fn composition_is_additive() {
        let acc = RdpAccountant::with_default_grid(1e-5).unwrap();
        assert_eq!(acc.compose_topk_gaussian(10, 50.0, 0).unwrap(), acc);
        let a = acc
            .compose_topk_gaussian(10, 50.0, 3)
            .unwrap()
            .compose_topk_gaussian(10, 50.0, 4)
            .unwrap();
        let b = acc.compose_topk_gaussian(10, 50.0, 7).unwrap();
        for (x, y) in a.totals().iter().zip(b.totals()) {
            assert!((x - y).abs() <= 1e-12 * y.abs());
        }
        assert!(a.totals().iter().zip(acc.totals()).all(|(x, y)| x >= y));
    }

    #[test]
    fn best_epsilon_over_grid() {
        let single = RdpAccountant::new(vec![4.0], 1e-5)
            .unwrap()
            .compose(|_| Ok(0.3), 2)
            .unwrap();
        assert_eq!(
            single.best_epsilon().unwrap().epsilon,
            rdp_to_dp(4.0, 0.6, 1e-5).unwrap()
        );
        let zero = RdpAccountant::with_default_grid(1e-5).unwrap();
        let eps = zero.best_epsilon().unwrap().epsilon;
        assert!((eps - (1e5f64).ln() / 255.0).abs() < 1e-15);
        assert!(matches!(
            RdpAccountant::new(vec![], 1e-5).unwrap().best_epsilon(),
            Err(DpError::EmptyGrid)
        ));
    }

    #[test]
    fn json_roundtrip() {
        let acc = RdpAccountant::with_default_grid(1e-5)
            .unwrap()
            .compose_topk_gaussian(3, 7.0, 11)
            .unwrap();
        assert_eq!(RdpAccountant::from_json(&acc.to_json()).unwrap(), acc);
        assert!(RdpAccountant::from_json("{}").is_err());
    }
}
