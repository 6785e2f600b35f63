use serde::{Deserialize, Serialize};

use super::{GradSet, NnError, ParamSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam,
}

/// Optimizer state carried between steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum OptimState {
    Sgd,
    Adam {
        m: ParamSet,
        v: ParamSet,
        step: u64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

impl OptimState {
    pub fn new(kind: OptimizerKind, params: &ParamSet) -> Self {
        match kind {
            OptimizerKind::Sgd => OptimState::Sgd,
            OptimizerKind::Adam => OptimState::Adam {
                m: params.zeros_like(),
                v: params.zeros_like(),
                step: 0,
                beta1: ADAM_BETA1,
                beta2: ADAM_BETA2,
                eps: ADAM_EPS,
            },
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        match self {
            OptimState::Sgd => OptimizerKind::Sgd,
            OptimState::Adam { .. } => OptimizerKind::Adam,
        }
    }

    /// Applies one step of whichever optimizer this state belongs to.
    pub fn step(&self, params: &ParamSet, grads: &GradSet, lr: f64) -> Result<(OptimState, ParamSet), NnError> {
        match self {
            OptimState::Sgd => Ok((OptimState::Sgd, sgd_step(params, grads, lr)?)),
            OptimState::Adam { .. } => adam_step(self, params, grads, lr),
        }
    }
}

fn check_lr(lr: f64) -> Result<(), NnError> {
    if !(lr.is_finite() && lr >= 0.0) {
        return Err(NnError::InvalidArgument(format!(
            "learning rate must be finite and non-negative, got {lr}"
        )));
    }
    Ok(())
}

/// `params − lr · grads`.
pub fn sgd_step(params: &ParamSet, grads: &GradSet, lr: f64) -> Result<ParamSet, NnError> {
    check_lr(lr)?;
    params.zip_map(grads, |p, g| p - lr * g)
}

/// Bias-corrected Adam update.
pub fn adam_step(
    state: &OptimState,
    params: &ParamSet,
    grads: &GradSet,
    lr: f64,
) -> Result<(OptimState, ParamSet), NnError> {
    check_lr(lr)?;
    let OptimState::Adam {
        m,
        v,
        step,
        beta1,
        beta2,
        eps,
    } = state
    else {
        return Err(NnError::InvalidArgument("adam_step needs Adam state".into()));
    };
    params.check_congruent(grads)?;
    let (b1, b2, eps) = (*beta1, *beta2, *eps);
    let m = m.zip_map(grads, |m, g| b1 * m + (1.0 - b1) * g)?;
    let v = v.zip_map(grads, |v, g| b2 * v + (1.0 - b2) * g * g)?;
    let t = step + 1;
    let c1 = 1.0 - b1.powf(t as f64);
    let c2 = 1.0 - b2.powf(t as f64);
    let update = m.zip_map(&v, |m, v| (m / c1) / ((v / c2).sqrt() + eps))?;
    let params = params.zip_map(&update, |p, u| p - lr * u)?;
    Ok((
        OptimState::Adam {
            m,
            v,
            step: t,
            beta1: b1,
            beta2: b2,
            eps,
        },
        params,
    ))
}

/// Exponential moving average `ζ·θ_t + (1−ζ)·θ_{t−1}`.
pub fn ema_update(theta_t: &ParamSet, theta_prev: &ParamSet, zeta: f64) -> Result<ParamSet, NnError> {
    if !(0.0..=1.0).contains(&zeta) {
        return Err(NnError::InvalidArgument(format!(
            "EMA momentum must lie in [0, 1], got {zeta}"
        )));
    }
    if zeta == 1.0 {
        theta_t.check_congruent(theta_prev)?;
        return Ok(theta_t.clone());
    }
    if zeta == 0.0 {
        theta_t.check_congruent(theta_prev)?;
        return Ok(theta_prev.clone());
    }
    theta_t.zip_map(theta_prev, |a, b| zeta * a + (1.0 - zeta) * b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{DenseParams, NetworkSpec};
    use crate::tensor::Tensor;
    use std::collections::BTreeMap;

    fn scalar(v: f64) -> ParamSet {
        ParamSet::from_layers(BTreeMap::from([(
            0,
            DenseParams {
                weight: Tensor::new(vec![1, 1], vec![v]).unwrap(),
                bias: None,
            },
        )]))
    }

    fn value(p: &ParamSet) -> f64 {
        p.to_flat()[0]
    }

    #[test]
    fn sgd_arithmetic() {
        assert_eq!(value(&sgd_step(&scalar(2.0), &scalar(4.0), 0.5).unwrap()), 0.0);
        assert_eq!(value(&sgd_step(&scalar(2.0), &scalar(4.0), 0.0).unwrap()), 2.0);
        assert!(sgd_step(&scalar(2.0), &scalar(4.0), -1.0).is_err());
    }

    #[test]
    fn two_sgd_steps_equal_one_with_summed_grads() {
        let p = scalar(1.25);
        let (g1, g2, lr) = (0.5, -0.75, 0.25);
        let two = sgd_step(&sgd_step(&p, &scalar(g1), lr).unwrap(), &scalar(g2), lr).unwrap();
        let one = sgd_step(&p, &scalar(g1 + g2), lr).unwrap();
        assert_eq!(value(&two), value(&one));
        assert_eq!(value(&one), 1.25 - lr * (g1 + g2));
    }

    #[test]
    fn sgd_rejects_incongruent() {
        let spec = NetworkSpec::mlp(&[2, 2], false).unwrap();
        assert!(sgd_step(&scalar(1.0), &ParamSet::zeros(&spec), 0.1).is_err());
    }

    #[test]
    fn adam_first_step_is_lr_times_sign() {
        for g in [3.0, -0.02, 150.0] {
            let p = scalar(1.0);
            let st = OptimState::new(OptimizerKind::Adam, &p);
            let (st, q) = adam_step(&st, &p, &scalar(g), 0.01).unwrap();
            let moved = value(&p) - value(&q);
            assert!((moved - 0.01 * f64::signum(g)).abs() < 1e-6, "g={g}: {moved}");
            assert!(matches!(st, OptimState::Adam { step: 1, .. }));
        }
    }

    #[test]
    fn adam_zero_grad_keeps_params_and_is_deterministic() {
        let p = scalar(0.7);
        let st = OptimState::new(OptimizerKind::Adam, &p);
        let (s1, q1) = adam_step(&st, &p, &scalar(0.0), 0.1).unwrap();
        let (s2, q2) = adam_step(&st, &p, &scalar(0.0), 0.1).unwrap();
        assert_eq!(value(&q1), 0.7);
        assert_eq!(s1, s2);
        assert_eq!(q1, q2);
    }

    #[test]
    fn ema_edges_and_midpoint() {
        let a = ParamSet::from_layers(BTreeMap::from([(
            0,
            DenseParams {
                weight: Tensor::new(vec![1, 2], vec![2.0, 10.0]).unwrap(),
                bias: None,
            },
        )]));
        let b = a.map(|v| if v == 2.0 { 4.0 } else { -10.0 });
        assert_eq!(ema_update(&a, &b, 1.0).unwrap(), a);
        assert_eq!(ema_update(&a, &b, 0.0).unwrap(), b);
        assert_eq!(ema_update(&a, &b, 0.5).unwrap().to_flat(), vec![3.0, 0.0]);
        assert!(ema_update(&a, &b, 1.5).is_err());
        assert!(ema_update(&a, &b, -0.1).is_err());
    }
}
