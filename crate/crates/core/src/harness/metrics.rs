//! Evaluation metrics.

use super::HarnessError;

/// Fraction of matching entries; 0 for empty input.
pub fn accuracy(preds: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    preds.iter().zip(labels).filter(|(p, y)| p == y).count() as f64 / labels.len() as f64
}

/// Best mean test accuracy: the largest per-round mean over clients.
/// `acc[t][i]` is client `i`'s score after round `t`.
pub fn compute_bmta(acc: &[Vec<f64>]) -> Result<f64, HarnessError> {
    if acc.is_empty() || acc.iter().any(Vec::is_empty) {
        return Err(HarnessError::Metric("empty score matrix".into()));
    }
    Ok(acc
        .iter()
        .map(|row| row.iter().sum::<f64>() / row.len() as f64)
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Unweighted mean of per-class F1 over `classes` labels. A class with no
/// true positives scores 0.
pub fn compute_macro_f1(preds: &[usize], labels: &[usize], classes: usize) -> f64 {
    if classes == 0 {
        return 0.0;
    }
    let mut tp = vec![0usize; classes];
    let mut fp = vec![0usize; classes];
    let mut fneg = vec![0usize; classes];
    for (&p, &y) in preds.iter().zip(labels) {
        if p == y {
            tp[y] += 1;
        } else {
            if p < classes {
                fp[p] += 1;
            }
            if y < classes {
                fneg[y] += 1;
            }
        }
    }
    let f1: f64 = (0..classes)
        .map(|c| {
            let denom = 2 * tp[c] + fp[c] + fneg[c];
            if tp[c] == 0 {
                0.0
            } else {
                2.0 * tp[c] as f64 / denom as f64
            }
        })
        .sum();
    f1 / classes as f64
}

/// Ranks starting at 1; tied values share their average rank.
fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation: Pearson correlation of average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, HarnessError> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(HarnessError::Metric(format!(
            "need two equal-length series of at least 2, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.iter().chain(y).any(|v| v.is_nan()) {
        return Err(HarnessError::Metric("series contains NaN".into()));
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(HarnessError::Metric(
            "correlation of a constant series is undefined".into(),
        ));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Per-client gain from federating and how it correlates with local skill.
#[derive(Debug, Clone, PartialEq)]
pub struct IncentiveReport {
    pub local: Vec<f64>,
    pub federated: Vec<f64>,
    /// `federated − local` per client.
    pub gains: Vec<f64>,
    /// Spearman correlation of local score and gain.
    pub spearman: f64,
}

pub fn incentive_report(local: &[f64], federated: &[f64]) -> Result<IncentiveReport, HarnessError> {
    if local.len() != federated.len() {
        return Err(HarnessError::Metric(format!(
            "{} local scores but {} federated",
            local.len(),
            federated.len()
        )));
    }
    let gains: Vec<f64> = federated.iter().zip(local).map(|(f, l)| f - l).collect();
    let rho = spearman(local, &gains)?;
    Ok(IncentiveReport {
        local: local.to_vec(),
        federated: federated.to_vec(),
        gains,
        spearman: rho,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bmta_examples() {
        assert_eq!(compute_bmta(&[vec![0.5, 0.7], vec![0.9, 0.6]]).unwrap(), 0.75);
        assert_eq!(compute_bmta(&[vec![0.2, 0.4]]).unwrap(), (0.2 + 0.4) / 2.0);
        assert_eq!(compute_bmta(&[vec![0.7, 0.5], vec![0.6, 0.9]]).unwrap(), 0.75);
        assert!(compute_bmta(&[]).is_err());
    }

    #[test]
    fn macro_f1_examples() {
        assert_eq!(compute_macro_f1(&[0, 1, 2], &[0, 1, 2], 3), 1.0);
        assert!((compute_macro_f1(&[0, 0, 0, 0], &[0, 0, 1, 1], 2) - 1.0 / 3.0).abs() < 1e-12);
        // relabel 0 ↔ 1
        let a = compute_macro_f1(&[0, 1, 1, 2], &[0, 1, 2, 2], 3);
        let b = compute_macro_f1(&[1, 0, 0, 2], &[1, 0, 2, 2], 3);
        assert_eq!(a, b);
    }

    #[test]
    fn spearman_examples() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[2.0, 1.0, 3.0]).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[9.0, 5.0, 1.0]).unwrap(), -1.0);
        assert!(spearman(&[1.0, 1.0], &[1.0, 2.0]).is_err());
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0]), vec![2.5, 1.0, 2.5]);
    }

    #[test]
    fn incentive_examples() {
        let r = incentive_report(&[0.9, 0.5], &[0.92, 0.8]).unwrap();
        assert!((r.gains[0] - 0.02).abs() < 1e-12 && (r.gains[1] - 0.3).abs() < 1e-12);
        assert_eq!(r.spearman, -1.0);
        assert!(incentive_report(&[0.5, 0.6], &[0.5, 0.6]).is_err());
    }
}
