//! Gradient-leakage attacks against federation clients.

use rand::Rng as _;

use pppfl::attack::{evaluate_leakage, fired_neurons, install_trap, reconstruct_all, trap_weight_init, AttackError};
use pppfl::data::gaussian_blobs;
use pppfl::nn::{self, NetworkSpec, ParamSet};
use pppfl::rng::substream;
use pppfl::Tensor;

#[test]
fn plain_client_with_batch_one_leaks_its_sample() {
    let secret = gaussian_blobs(40, 3, 6, 0.3, 1).unwrap();
    let synthetic = gaussian_blobs(40, 3, 6, 0.3, 2).unwrap();
    let spec = NetworkSpec::mlp(&[6, 10, 3], true).unwrap();
    for i in 0..10 {
        let params = ParamSet::init(&spec, &mut substream(3, &[i]));
        let x = secret.samples().select_rows(&[i as usize]);
        let (_, g) = nn::loss_and_grad(&spec, &params, &x, &secret.labels()[i as usize..=i as usize]).unwrap();
        let rec = reconstruct_all(&spec, &g).unwrap().score(&x).unwrap();
        let rep = evaluate_leakage(&rec, secret.samples(), synthetic.samples(), 1e-3).unwrap();
        assert!(!rep.rows.is_empty());
        assert_eq!(rep.secret_match_rate, 1.0);
        assert_eq!(rep.synthetic_match_rate, 0.0);
    }
}

#[test]
fn recovered_dimension_matches_the_input() {
    let spec = NetworkSpec::mlp(&[7, 5, 2], true).unwrap();
    let params = ParamSet::init(&spec, &mut substream(4, &[]));
    let x = Tensor::filled(vec![3, 7], 0.5);
    let (_, g) = nn::loss_and_grad(&spec, &params, &x, &[0, 1, 0]).unwrap();
    let rec = reconstruct_all(&spec, &g).unwrap().score(&x).unwrap();
    assert!(rec.samples.iter().all(|s| s.len() == 7));
    assert!(rec.residuals.iter().all(|&r| r >= 0.0));
    // Identical rows make every fired neuron an exact recovery.
    assert_eq!(rec.exact_count(&x, 1e-9), if rec.samples.is_empty() { 0 } else { 3 });
}

#[test]
fn tiny_percentile_fires_almost_everything() {
    let d = 16;
    let mut rng = substream(5, &[]);
    let trap = trap_weight_init(d, 32, &vec![0.0; d], &vec![1.0; d], 1e-6, &mut rng).unwrap();
    let b = trap.layer.bias.as_ref().unwrap().data().to_vec();
    let mut fired = 0;
    for _ in 0..100 {
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        fired += fired_neurons(&trap.layer.weight, &b, &x).unwrap().len();
    }
    assert!(fired as f64 >= 0.99 * 3200.0);
}

#[test]
fn trap_must_fit_the_first_layer() {
    let spec = NetworkSpec::mlp(&[4, 6, 2], true).unwrap();
    let params = ParamSet::init(&spec, &mut substream(6, &[]));
    let mut rng = substream(7, &[]);
    let wrong = trap_weight_init(4, 5, &[0.0; 4], &[1.0; 4], 0.5, &mut rng).unwrap();
    assert!(matches!(
        install_trap(&spec, &params, &wrong),
        Err(AttackError::InvalidArgument(_))
    ));
    let right = trap_weight_init(4, 6, &[0.0; 4], &[1.0; 4], 0.5, &mut rng).unwrap();
    let trapped = install_trap(&spec, &params, &right).unwrap();
    assert_eq!(trapped.layer(0).unwrap(), &right.layer);
    assert_eq!(trapped.layer(2), params.layer(2));
    assert!(trap_weight_init(4, 6, &[0.0; 4], &[1.0; 4], 0.0, &mut rng).is_err());
    assert!(trap_weight_init(4, 6, &[0.0; 3], &[1.0; 4], 0.5, &mut rng).is_err());
}
