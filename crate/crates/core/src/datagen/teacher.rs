//! Teacher discriminators, each owning a disjoint shard of one class's data.

use rand::seq::SliceRandom;

use super::DatagenError;
use crate::nn::{self, sigmoid, NetworkSpec, NnError, OptimState, OptimizerKind, ParamSet};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Splits `items` into `n` disjoint shards whose sizes differ by at most one.
/// Each shard is sorted.
pub fn partition_disjoint(items: &[usize], n: usize, rng: &mut Rng) -> Result<Vec<Vec<usize>>, DatagenError> {
    if n == 0 || items.len() < n {
        return Err(DatagenError::InvalidConfig(format!(
            "cannot split {} items into {n} non-empty shards",
            items.len()
        )));
    }
    let mut shuffled = items.to_vec();
    shuffled.shuffle(rng);
    let (base, extra) = (items.len() / n, items.len() % n);
    let mut it = shuffled.into_iter();
    Ok((0..n)
        .map(|s| {
            let mut shard: Vec<usize> = it.by_ref().take(base + usize::from(s < extra)).collect();
            shard.sort_unstable();
            shard
        })
        .collect())
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Standard GAN discriminator loss `mean(−log D(real)) + mean(−log(1 − D(fake)))`
/// with `D = sigmoid(logit)`. Returns the loss and its gradient with respect to
/// each real and fake logit.
pub fn discriminator_loss(real_logits: &[f64], fake_logits: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let (nr, nf) = (real_logits.len() as f64, fake_logits.len() as f64);
    let loss_r: f64 = real_logits.iter().map(|&l| softplus(-l)).sum::<f64>() / nr;
    let loss_f: f64 = fake_logits.iter().map(|&l| softplus(l)).sum::<f64>() / nf;
    let gr = real_logits.iter().map(|&l| (sigmoid(l) - 1.0) / nr).collect();
    let gf = fake_logits.iter().map(|&l| sigmoid(l) / nf).collect();
    (loss_r + loss_f, gr, gf)
}

/// `N` discriminators over one class, each trained only on its own shard.
#[derive(Debug, Clone)]
pub struct TeacherEnsemble {
    pub spec: NetworkSpec,
    pub params: Vec<ParamSet>,
    pub optim: Vec<OptimState>,
    /// Row indices (into the class dataset) owned by each teacher.
    pub shards: Vec<Vec<usize>>,
}

impl TeacherEnsemble {
    pub fn new(
        spec: NetworkSpec,
        shards: Vec<Vec<usize>>,
        optimizer: OptimizerKind,
        rng: &mut Rng,
    ) -> Result<Self, DatagenError> {
        if spec.output_dim() != 1 {
            return Err(DatagenError::InvalidConfig(
                "teacher networks must output a single logit".into(),
            ));
        }
        let params: Vec<ParamSet> = shards.iter().map(|_| ParamSet::init(&spec, rng)).collect();
        let optim = params.iter().map(|p| OptimState::new(optimizer, p)).collect();
        Ok(Self {
            spec,
            params,
            optim,
            shards,
        })
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }
}

/// One optimizer step of a teacher on its discriminator loss. Returns the
/// updated parameters, optimizer state and the loss before the step.
pub fn teacher_train_step(
    spec: &NetworkSpec,
    params: &ParamSet,
    optim: &OptimState,
    real: &Tensor,
    fake: &Tensor,
    lr: f64,
) -> Result<(ParamSet, OptimState, f64), NnError> {
    if real.rows() == 0 || fake.rows() == 0 {
        return Err(NnError::InvalidArgument("empty discriminator batch".into()));
    }
    let mut data = real.data().to_vec();
    data.extend_from_slice(fake.data());
    let batch = Tensor::new(vec![real.rows() + fake.rows(), real.cols()], data)?;
    let nr = real.rows();
    let (loss, grads, _) = nn::value_and_grad(spec, params, &batch, |out, _| {
        let (l, gr, gf) = discriminator_loss(&out[..nr], &out[nr..]);
        Ok((l, [gr, gf].concat()))
    })?;
    let (state, params) = optim.step(params, &grads, lr)?;
    Ok((params, state, loss))
}

/// Per-row gradient of the teacher's realness logit with respect to its
/// input, as a `rows × dim` tensor.
pub fn teacher_directions(spec: &NetworkSpec, params: &ParamSet, samples: &Tensor) -> Result<Tensor, NnError> {
    let (_, _, dx) = nn::value_and_grad(spec, params, samples, |out, _| {
        Ok((out.iter().sum(), vec![1.0; out.len()]))
    })?;
    Ok(Tensor::new(samples.shape().to_vec(), dx)?)
}

/// Direction for a single sample.
pub fn teacher_direction(spec: &NetworkSpec, params: &ParamSet, sample: &[f64]) -> Result<Vec<f64>, NnError> {
    let t = Tensor::new(vec![1, sample.len()], sample.to_vec())?;
    Ok(teacher_directions(spec, params, &t)?.into_data())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{DenseParams, Layer};
    use crate::rng::substream;
    use std::collections::BTreeMap;

    #[test]
    fn shards_are_balanced_cover() {
        let items: Vec<usize> = (100..110).collect();
        let mut rng = substream(4, &[]);
        let shards = partition_disjoint(&items, 2, &mut rng).unwrap();
        assert_eq!(shards.iter().map(Vec::len).collect::<Vec<_>>(), vec![5, 5]);
        let mut all = shards.concat();
        all.sort_unstable();
        assert_eq!(all, items);
        assert_eq!(partition_disjoint(&items, 1, &mut rng).unwrap(), vec![items.clone()]);
        assert!(partition_disjoint(&items, 11, &mut rng).is_err());
        let again = partition_disjoint(&items, 3, &mut substream(9, &[])).unwrap();
        assert_eq!(again, partition_disjoint(&items, 3, &mut substream(9, &[])).unwrap());
        assert_eq!(again.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 3, 3]);
    }

    #[test]
    fn loss_at_half_and_near_optimum() {
        let (l, gr, gf) = discriminator_loss(&[0.0, 0.0], &[0.0]);
        assert!((l - 2.0 * 2f64.ln()).abs() < 1e-15);
        assert_eq!(gr, vec![-0.25, -0.25]);
        assert_eq!(gf, vec![0.5]);
        let eta: f64 = 1e-6;
        let logit = ((1.0 - eta) / eta).ln();
        let (l, _, _) = discriminator_loss(&[logit], &[-logit]);
        assert!((l + 2.0 * (1.0 - eta).ln()).abs() < 1e-12);
    }

    #[test]
    fn linear_teacher_direction_is_its_weight() {
        let spec = NetworkSpec::new(vec![Layer::Dense {
            input: 3,
            output: 1,
            bias: true,
        }])
        .unwrap();
        let w = vec![0.5, -2.0, 3.0];
        let params = ParamSet::from_layers(BTreeMap::from([(
            0,
            DenseParams {
                weight: Tensor::new(vec![1, 3], w.clone()).unwrap(),
                bias: Some(Tensor::vector(vec![0.7]).unwrap()),
            },
        )]));
        for x in [[0.0, 0.0, 0.0], [1.0, -4.0, 9.0]] {
            assert_eq!(teacher_direction(&spec, &params, &x).unwrap(), w);
        }
    }

    #[test]
    fn train_step_reduces_loss() {
        let spec = NetworkSpec::mlp(&[2, 4, 1], false).unwrap();
        let mut rng = substream(0, &[]);
        let mut params = ParamSet::init(&spec, &mut rng);
        let mut state = OptimState::new(OptimizerKind::Sgd, &params);
        let real = Tensor::from_rows(&[vec![1.0, 1.0], vec![0.9, 1.0]]).unwrap();
        let fake = Tensor::from_rows(&[vec![-1.0, 0.0], vec![0.0, -1.0]]).unwrap();
        let (_, _, first) = teacher_train_step(&spec, &params, &state, &real, &fake, 0.0).unwrap();
        let mut last = first;
        for _ in 0..50 {
            let out = teacher_train_step(&spec, &params, &state, &real, &fake, 0.1).unwrap();
            params = out.0;
            state = out.1;
            last = out.2;
        }
        assert!(last < first);
    }
}
