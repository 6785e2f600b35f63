//! End-to-end runs of the harness on a small task.

use pppfl::fed::load_model;
use pppfl::harness::{run_experiment, DatasetSpec, ExperimentConfig, Mode, SweepLevel};

fn small(mode: Mode) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        mode,
        clients: 3,
        epsilons: vec![1.0, 2.0, 3.0],
        synthetic_per_class: 10,
        hidden: vec![8],
        local_lr: 0.02,
        dataset: DatasetSpec::Blobs {
            samples: 600,
            classes: 3,
            dim: 8,
            spread: 0.3,
            seed: 0,
        },
        sweep: vec![SweepLevel {
            name: "only".into(),
            epsilons: vec![1.0; 3],
            dp_enabled: true,
        }],
        ..ExperimentConfig::default()
    };
    cfg.fed.rounds = 4;
    cfg.fed.inner_lr = 0.05;
    cfg.fed.finetune_steps = 10;
    cfg.fed.finetune_lr = 0.02;
    cfg.datagen.n_teachers = 4;
    cfg.datagen.top_k = 4;
    cfg.datagen.max_rounds = 3;
    cfg.datagen.noise_sigma = 200.0;
    cfg
}

#[test]
fn every_mode_completes_and_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    for mode in Mode::ALL {
        let run = run_experiment(&small(mode), dir.path()).unwrap();
        let s = &run.summary;
        assert_eq!(s.mode, mode);
        assert_eq!(s.rounds_completed, 4);
        assert_eq!(run.metrics.rounds(), 4);
        assert_eq!(s.client_accuracy.len(), 3);
        let bmta = s.bmta.unwrap();
        assert!((0.0..=1.0).contains(&bmta));
        assert_eq!(bmta, run.metrics.bmta().unwrap());
        for f in ["config.toml", "metrics.csv", "summary.json", "accuracy.svg"] {
            assert!(run.dir.join(f).exists(), "{mode:?}: {f}");
        }
        assert_eq!(run.datagen.len(), if mode.needs_synthetic() { 3 } else { 0 });
        if let Some(global) = &run.global {
            let (spec, params) = load_model(&run.dir.join("models"), "global").unwrap();
            assert_eq!(&spec, &run.spec);
            assert_eq!(&params, global);
        }
    }
}

#[test]
fn run_directory_is_keyed_by_config() {
    let dir = tempfile::tempdir().unwrap();
    let a = run_experiment(&small(Mode::Fedavg), dir.path()).unwrap();
    let mut cfg = small(Mode::Fedavg);
    cfg.seed = 1;
    let b = run_experiment(&cfg, dir.path()).unwrap();
    assert_ne!(a.dir, b.dir);
    assert!(a.dir.ends_with(&small(Mode::Fedavg).hash()[..16]));
    let saved = ExperimentConfig::load(&a.dir.join("config.toml")).unwrap();
    assert_eq!(saved, small(Mode::Fedavg));
}

#[test]
fn shipped_desk_config_matches_the_builder() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/desk.toml");
    assert_eq!(
        ExperimentConfig::load(std::path::Path::new(path)).unwrap(),
        ExperimentConfig::desk()
    );
}
