use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::NnError;

/// Cosine annealing with warm restarts for the outer learning rate.
///
/// The `T` rounds are cut into `M` cycles of length `L = ⌈T/M⌉`. Within a
/// cycle the rate decays from `lr_max` to `lr_min` along a half cosine, and
/// each cycle restarts at `lr_max`.
pub fn cosine_lr(t: usize, total: usize, cycles: usize, lr_max: f64, lr_min: f64) -> Result<f64, NnError> {
    if total == 0 || t == 0 || t > total {
        return Err(NnError::InvalidArgument(format!("round {t} outside 1..={total}")));
    }
    if cycles == 0 {
        return Err(NnError::InvalidArgument("need at least one cycle".into()));
    }
    if !(lr_min >= 0.0 && lr_max >= lr_min && lr_max.is_finite()) {
        return Err(NnError::InvalidArgument(format!(
            "need lr_max ≥ lr_min ≥ 0, got {lr_max}, {lr_min}"
        )));
    }
    let len = total.div_ceil(cycles);
    let p = ((t - 1) % len) as f64 / len as f64;
    Ok(lr_min + (lr_max - lr_min) * (1.0 + (PI * p).cos()) / 2.0)
}

/// Outer learning-rate policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    Constant { lr: f64 },
    Cosine { cycles: usize, lr_max: f64, lr_min: f64 },
}

impl LrSchedule {
    pub fn at(&self, t: usize, total: usize) -> Result<f64, NnError> {
        match *self {
            LrSchedule::Constant { lr } => Ok(lr),
            LrSchedule::Cosine { cycles, lr_max, lr_min } => cosine_lr(t, total, cycles, lr_max, lr_min),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn starts_at_max_and_hits_midpoint() {
        assert_eq!(cosine_lr(1, 30, 3, 0.3, 0.1).unwrap(), 0.3);
        // L = 10, t = 6 gives p = 0.5
        let mid = cosine_lr(6, 30, 3, 0.3, 0.1).unwrap();
        assert!((mid - 0.2).abs() < 1e-12);
    }

    #[test]
    fn restarts_every_ceil_t_over_m() {
        let restarts: Vec<usize> = (1..=30)
            .filter(|&t| cosine_lr(t, 30, 3, 1.0, 0.0).unwrap() == 1.0)
            .collect();
        assert_eq!(restarts, vec![1, 11, 21]);
        // ⌈10/3⌉ = 4
        let restarts: Vec<usize> = (1..=10)
            .filter(|&t| cosine_lr(t, 10, 3, 1.0, 0.0).unwrap() == 1.0)
            .collect();
        assert_eq!(restarts, vec![1, 5, 9]);
    }

    #[test]
    fn rejects_bad_ranges() {
        assert!(cosine_lr(0, 30, 3, 1.0, 0.0).is_err());
        assert!(cosine_lr(31, 30, 3, 1.0, 0.0).is_err());
        assert!(cosine_lr(1, 30, 0, 1.0, 0.0).is_err());
        assert!(cosine_lr(1, 30, 1, 0.1, 0.2).is_err());
        assert!(cosine_lr(1, 30, 1, 0.1, -0.2).is_err());
    }
}
