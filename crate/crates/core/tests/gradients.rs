//! Autodiff gradients against central finite differences.

use proptest::prelude::*;
use rand::Rng as _;

use pppfl::nn::{self, Layer, NetworkSpec, ParamSet};
use pppfl::rng::substream;
use pppfl::Tensor;

fn worst_error(spec: &NetworkSpec, seed: u64, rows: usize) -> f64 {
    let mut rng = substream(seed, &[]);
    let params = ParamSet::init(spec, &mut rng).map(|v| v + 0.1 * (rng.random::<f64>() - 0.5));
    let x: Vec<f64> = (0..rows * spec.input_dim())
        .map(|_| rng.random_range(-2.0..2.0))
        .collect();
    let x = Tensor::new(vec![rows, spec.input_dim()], x).unwrap();
    let y: Vec<usize> = (0..rows).map(|_| rng.random_range(0..spec.output_dim())).collect();
    let (_, g) = nn::loss_and_grad(spec, &params, &x, &y).unwrap();
    let (flat, gflat) = (params.to_flat(), g.to_flat());
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for j in 0..flat.len() {
        let mut f = flat.clone();
        f[j] += h;
        let up = nn::loss(spec, &params.with_flat(&f).unwrap(), &x, &y).unwrap();
        f[j] -= 2.0 * h;
        let down = nn::loss(spec, &params.with_flat(&f).unwrap(), &x, &y).unwrap();
        let fd = (up - down) / (2.0 * h);
        worst = worst.max((fd - gflat[j]).abs() / fd.abs().max(gflat[j].abs()).max(1e-4));
    }
    worst
}

fn spec_strategy() -> impl Strategy<Value = NetworkSpec> {
    (
        prop::collection::vec(1usize..6, 2..5),
        prop::collection::vec(any::<(bool, bool)>(), 4),
    )
        .prop_map(|(dims, flags)| {
            let mut layers = Vec::new();
            for (i, w) in dims.windows(2).enumerate() {
                layers.push(Layer::Dense {
                    input: w[0],
                    output: w[1],
                    bias: flags[i].0,
                });
                if i + 2 < dims.len() {
                    layers.push(if flags[i].1 { Layer::Sigmoid } else { Layer::Relu });
                }
            }
            layers.push(Layer::SoftmaxXentHead);
            NetworkSpec::new(layers).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn autodiff_matches_finite_differences(spec in spec_strategy(), seed in any::<u64>(), rows in 1usize..5) {
        prop_assert!(worst_error(&spec, seed, rows) < 1e-4);
    }
}

#[test]
fn sigmoid_stack_gradients() {
    let spec = NetworkSpec::new(vec![
        Layer::Dense {
            input: 4,
            output: 5,
            bias: true,
        },
        Layer::Sigmoid,
        Layer::Dense {
            input: 5,
            output: 3,
            bias: true,
        },
        Layer::Sigmoid,
        Layer::Dense {
            input: 3,
            output: 3,
            bias: false,
        },
        Layer::SoftmaxXentHead,
    ])
    .unwrap();
    for seed in 0..10 {
        assert!(worst_error(&spec, seed, 3) < 1e-6);
    }
}

#[test]
fn gradient_is_mean_over_rows() {
    let spec = NetworkSpec::mlp(&[3, 4, 2], true).unwrap();
    let params = ParamSet::init(&spec, &mut substream(5, &[]));
    let x = Tensor::from_rows(&[vec![0.1, 0.5, -0.3], vec![1.0, -0.2, 0.7]]).unwrap();
    let (_, both) = nn::loss_and_grad(&spec, &params, &x, &[0, 1]).unwrap();
    let (_, a) = nn::loss_and_grad(&spec, &params, &x.select_rows(&[0]), &[0]).unwrap();
    let (_, b) = nn::loss_and_grad(&spec, &params, &x.select_rows(&[1]), &[1]).unwrap();
    for ((m, p), q) in both.to_flat().iter().zip(a.to_flat()).zip(b.to_flat()) {
        assert!((m - 0.5 * (p + q)).abs() < 1e-14);
    }
}
