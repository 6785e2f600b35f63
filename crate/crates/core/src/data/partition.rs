use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::DataError;
use crate::rng::{domain, substream, Rng};

const MAX_REDRAWS: usize = 100;

/// Disjoint per-client index lists covering `0..n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub clients: Vec<Vec<usize>>,
    pub tau: f64,
    pub seed: u64,
}

impl PartitionPlan {
    pub fn num_clients(&self) -> usize {
        self.clients.len()
    }

    /// True when the lists are pairwise disjoint and cover `0..n` exactly.
    pub fn is_disjoint_cover(&self, n: usize) -> bool {
        let mut seen = vec![false; n];
        for &i in self.clients.iter().flatten() {
            if i >= n || seen[i] {
                return false;
            }
            seen[i] = true;
        }
        seen.into_iter().all(|s| s)
    }
}

/// Rounds `p · n` to integers summing to `n`; leftover units go to the largest
/// fractional parts, lowest index first on ties.
pub(crate) fn largest_remainder(p: &[f64], n: usize) -> Vec<usize> {
    let raw: Vec<f64> = p.iter().map(|q| q * n as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - raw[a].floor();
        let fb = raw[b] - raw[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &j in order.iter().cycle().take(n.saturating_sub(assigned)) {
        counts[j] += 1;
    }
    counts
}

fn dirichlet(k: usize, tau: f64, rng: &mut Rng) -> Vec<f64> {
    let gamma = Gamma::new(tau, 1.0).expect("tau validated positive");
    loop {
        let draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
        let total: f64 = draws.iter().sum();
        if total > 0.0 && total.is_finite() {
            return draws.into_iter().map(|g| g / total).collect();
        }
    }
}

/// Label-skewed split of `labels` across `k` clients: each class is divided by
/// proportions drawn from a symmetric Dirichlet(`tau`).
pub fn dirichlet_partition(labels: &[usize], k: usize, tau: f64, seed: u64) -> Result<PartitionPlan, DataError> {
    if k == 0 {
        return Err(DataError::Invalid("need at least one client".into()));
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(DataError::Invalid(format!("concentration {tau} must be positive")));
    }
    if labels.len() < k {
        return Err(DataError::Invalid(format!(
            "{} samples cannot cover {k} clients",
            labels.len()
        )));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &y) in labels.iter().enumerate() {
        by_class.entry(y).or_default().push(i);
    }
    let mut rng = substream(seed, &[domain::PARTITION]);
    let mut clients = vec![Vec::new(); k];
    for attempt in 0..MAX_REDRAWS {
        clients = vec![Vec::new(); k];
        for idx in by_class.values() {
            let p = dirichlet(k, tau, &mut rng);
            let counts = largest_remainder(&p, idx.len());
            let mut shuffled = idx.clone();
            shuffled.shuffle(&mut rng);
            let mut it = shuffled.into_iter();
            for (client, &c) in clients.iter_mut().zip(&counts) {
                client.extend(it.by_ref().take(c));
            }
        }
        if clients.iter().all(|c| !c.is_empty()) {
            break;
        }
        log::debug!("partition attempt {attempt} left a client empty; redrawing");
    }
    for c in 0..k {
        if clients[c].is_empty() {
            let donor = (0..k)
                .max_by(|&a, &b| clients[a].len().cmp(&clients[b].len()).then(b.cmp(&a)))
                .expect("k >= 1");
            let moved = clients[donor].pop().expect("donor has more than one sample");
            clients[c].push(moved);
        }
    }
    for c in &mut clients {
        c.sort_unstable();
    }
    Ok(PartitionPlan { clients, tau, seed })
}

/// Stratified split of `indices` (class of index `i` is `labels[i]`). The
/// validation side gets `round(val_fraction · n)` items, at least one and at
/// most `n - 1`. Both outputs are sorted.
pub fn split_train_val(
    indices: &[usize],
    labels: &[usize],
    val_fraction: f64,
    rng: &mut Rng,
) -> Result<(Vec<usize>, Vec<usize>), DataError> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(DataError::Invalid(format!(
            "validation fraction {val_fraction} outside (0, 1)"
        )));
    }
    let n = indices.len();
    if n < 2 {
        return Err(DataError::Invalid(format!("cannot split {n} items")));
    }
    let n_val = ((val_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &i in indices {
        groups.entry(labels[i]).or_default().push(i);
    }
    let groups: Vec<Vec<usize>> = groups.into_values().collect();
    let sizes: Vec<f64> = groups.iter().map(|g| g.len() as f64 / n as f64).collect();
    let quota = largest_remainder(&sizes, n_val);
    let (mut train, mut val) = (Vec::with_capacity(n - n_val), Vec::with_capacity(n_val));
    for (mut g, q) in groups.into_iter().zip(quota) {
        g.shuffle(rng);
        let q = q.min(g.len());
        val.extend_from_slice(&g[..q]);
        train.extend_from_slice(&g[q..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok((train, val))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn largest_remainder_hand_case() {
        assert_eq!(largest_remainder(&[0.5, 0.3, 0.2], 7), vec![4, 2, 1]);
        assert_eq!(largest_remainder(&[0.25; 4], 2), vec![1, 1, 0, 0]);
        assert_eq!(largest_remainder(&[1.0], 5), vec![5]);
    }

    #[test]
    fn single_client_gets_everything() {
        let labels: Vec<usize> = (0..50).map(|i| i % 5).collect();
        let plan = dirichlet_partition(&labels, 1, 0.5, 3).unwrap();
        assert_eq!(plan.clients[0], (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn cover_and_nonempty_across_seeds() {
        let labels: Vec<usize> = (0..40).map(|i| i % 4).collect();
        for seed in 0..50 {
            let plan = dirichlet_partition(&labels, 8, 0.1, seed).unwrap();
            assert!(plan.is_disjoint_cover(40));
            assert!(plan.clients.iter().all(|c| !c.is_empty()));
        }
    }

    #[test]
    fn errors() {
        assert!(dirichlet_partition(&[0, 1], 3, 0.5, 0).is_err());
        assert!(dirichlet_partition(&[0, 1], 0, 0.5, 0).is_err());
        assert!(dirichlet_partition(&[0, 1], 1, 0.0, 0).is_err());
        let mut rng = substream(0, &[]);
        assert!(split_train_val(&[0, 1], &[0, 0], 1.0, &mut rng).is_err());
        assert!(split_train_val(&[0, 1], &[0, 0], 0.0, &mut rng).is_err());
    }

    #[test]
    fn split_half_of_ten() {
        let labels = vec![0, 1, 0, 1, 0, 1, 0, 1, 0, 1];
        let idx: Vec<usize> = (0..10).collect();
        let mut rng = substream(1, &[]);
        let (tr, va) = split_train_val(&idx, &labels, 0.5, &mut rng).unwrap();
        assert_eq!((tr.len(), va.len()), (5, 5));
        let mut all = [tr.clone(), va.clone()].concat();
        all.sort_unstable();
        assert_eq!(all, idx);
        let mut rng2 = substream(1, &[]);
        assert_eq!(split_train_val(&idx, &labels, 0.5, &mut rng2).unwrap(), (tr, va));
    }
}
