//! Experiment configuration, read from TOML.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::datagen::DpGanConfig;
use crate::fed::FedConfig;

/// Source of the pooled dataset that gets partitioned across clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    /// Procedural handwritten-style digits, `side × side` grayscale.
    Glyphs {
        samples: usize,
        side: usize,
        #[serde(default)]
        seed: u64,
    },
    Blobs {
        samples: usize,
        classes: usize,
        dim: usize,
        spread: f64,
        #[serde(default)]
        seed: u64,
    },
    Moons {
        samples: usize,
        noise: f64,
        #[serde(default)]
        seed: u64,
    },
    /// An IDX image/label pair such as MNIST or Fashion-MNIST.
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default)]
        limit: Option<usize>,
        #[serde(default = "one")]
        downsample: usize,
    },
    /// CIFAR-10 binary batches, concatenated.
    Cifar {
        batches: Vec<PathBuf>,
        #[serde(default)]
        limit: Option<usize>,
        #[serde(default = "one")]
        downsample: usize,
    },
    Csv {
        path: PathBuf,
        #[serde(default)]
        limit: Option<usize>,
    },
}

fn one() -> usize {
    1
}

/// What gets trained and where it is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Meta-learning on synthetic data with budget weighting, then fine-tuning.
    Pppfl,
    /// Meta-learning with uniform weights, no smoothing, constant rate.
    Fedmeta,
    /// Parameter averaging on synthetic data, then fine-tuning.
    Fedavg,
    /// Each client trains alone on its secret data.
    LocalSecret,
    /// Each client trains alone on its synthetic data.
    LocalSynthetic,
    /// Meta-learning directly on secret data, then fine-tuning.
    CollabSecret,
}

impl Mode {
    pub const ALL: [Mode; 6] = [
        Mode::Pppfl,
        Mode::Fedmeta,
        Mode::Fedavg,
        Mode::LocalSecret,
        Mode::LocalSynthetic,
        Mode::CollabSecret,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Pppfl => "pppfl",
            Mode::Fedmeta => "fedmeta",
            Mode::Fedavg => "fedavg",
            Mode::LocalSecret => "local_secret",
            Mode::LocalSynthetic => "local_synthetic",
            Mode::CollabSecret => "collab_secret",
        }
    }

    /// Whether the mode consumes synthetic data.
    pub fn needs_synthetic(self) -> bool {
        matches!(self, Mode::Pppfl | Mode::Fedmeta | Mode::Fedavg | Mode::LocalSynthetic)
    }
}

impl FromStr for Mode {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| {
            let names: Vec<_> = Mode::ALL.iter().map(|m| m.name()).collect();
            HarnessError::Config(format!("unknown mode {s:?}; expected one of {}", names.join(", ")))
        })
    }
}

/// One privacy level of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepLevel {
    pub name: String,
    /// Per-client budgets for this level.
    pub epsilons: Vec<f64>,
    /// `false` trains generators without noise; the budgets then only weight
    /// the aggregation.
    #[serde(default = "yes")]
    pub dp_enabled: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub mode: Mode,
    /// Number of clients `K`.
    pub clients: usize,
    /// Dirichlet concentration of the label skew.
    pub tau: f64,
    /// Share of each client's data held out as its secret validation split.
    pub val_fraction: f64,
    /// Privacy budget of each client, one per client.
    pub epsilons: Vec<f64>,
    /// Synthetic samples drawn per class.
    pub synthetic_per_class: usize,
    /// Share of each federation dataset used as the query split.
    pub query_fraction: f64,
    /// Hidden widths of the classifier.
    pub hidden: Vec<usize>,
    /// Epochs per round in the local-only modes.
    pub local_epochs: usize,
    pub local_lr: f64,
    pub local_optimizer: crate::nn::OptimizerKind,
    pub dataset: DatasetSpec,
    pub fed: FedConfig,
    pub datagen: DpGanConfig,
    pub sweep: Vec<SweepLevel>,
    pub sweep_seeds: Vec<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            mode: Mode::Pppfl,
            clients: 5,
            tau: 0.5,
            val_fraction: 0.2,
            epsilons: vec![1.0, 2.0, 3.0, 4.0, 5.0],
            synthetic_per_class: 100,
            query_fraction: 0.3,
            hidden: vec![64],
            local_epochs: 1,
            local_lr: 1e-3,
            local_optimizer: crate::nn::OptimizerKind::Adam,
            dataset: DatasetSpec::Glyphs {
                samples: 3000,
                side: 28,
                seed: 0,
            },
            fed: FedConfig::default(),
            datagen: DpGanConfig::default(),
            sweep: vec![
                SweepLevel {
                    name: "high_noise".into(),
                    epsilons: vec![1.0, 2.0, 3.0, 4.0, 5.0],
                    dp_enabled: true,
                },
                SweepLevel {
                    name: "low_noise".into(),
                    epsilons: vec![6.0, 7.0, 8.0, 9.0, 10.0],
                    dp_enabled: true,
                },
                SweepLevel {
                    name: "noise_off".into(),
                    epsilons: vec![10.0; 5],
                    dp_enabled: false,
                },
            ],
            sweep_seeds: vec![0, 1, 2],
        }
    }
}

impl ExperimentConfig {
    /// Small enough to run end to end in seconds per client on one core:
    /// 14×14 glyphs, compact generators with deterministic vote signs and
    /// rates scaled up for the short federation.
    pub fn desk() -> Self {
        let base = Self::default();
        Self {
            synthetic_per_class: 50,
            dataset: DatasetSpec::Glyphs {
                samples: 3000,
                side: 14,
                seed: 0,
            },
            fed: FedConfig {
                inner_lr: 0.05,
                outer_lr: crate::nn::LrSchedule::Cosine {
                    cycles: 3,
                    lr_max: 3e-3,
                    lr_min: 3e-4,
                },
                finetune_lr: 3e-3,
                ..base.fed.clone()
            },
            datagen: DpGanConfig {
                n_teachers: 20,
                top_k: 100,
                noise_sigma: 200.0,
                vote_threshold: 0.3,
                sign_mode: crate::dp::SignMode::Deterministic,
                max_rounds: 60,
                ..base.datagen.clone()
            },
            ..base
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        crate::digest::config_hash(self)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.clients == 0 {
            return bad("clients must be positive".into());
        }
        if self.epsilons.len() != self.clients {
            return bad(format!(
                "{} budgets given for {} clients",
                self.epsilons.len(),
                self.clients
            ));
        }
        if let Some(e) = self.epsilons.iter().find(|e| !(e.is_finite() && **e > 0.0)) {
            return bad(format!("budgets must be positive and finite, got {e}"));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        for (name, f) in [
            ("val_fraction", self.val_fraction),
            ("query_fraction", self.query_fraction),
        ] {
            if !(f > 0.0 && f < 1.0) {
                return bad(format!("{name} must lie in (0, 1), got {f}"));
            }
        }
        if self.mode.needs_synthetic() && self.synthetic_per_class < 2 {
            return bad("synthetic_per_class must be at least 2".into());
        }
        if !(self.local_lr > 0.0 && self.local_lr.is_finite()) {
            return bad(format!("local_lr must be positive, got {}", self.local_lr));
        }
        self.fed
            .validate(self.clients)
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        self.datagen
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        for level in &self.sweep {
            if level.epsilons.len() != self.clients {
                return bad(format!(
                    "sweep level {:?} has {} budgets for {} clients",
                    level.name,
                    level.epsilons.len(),
                    self.clients
                ));
            }
        }
        Ok(())
    }

    /// The config of one sweep cell.
    pub fn for_level(&self, level: &SweepLevel, seed: u64) -> Self {
        let mut cfg = self.clone();
        cfg.seed = seed;
        cfg.epsilons = level.epsilons.clone();
        cfg.datagen.dp_enabled = level.dp_enabled;
        cfg
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip_through_toml() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
        assert_eq!(cfg.fed.rounds, 30);
        assert_eq!(cfg.fed.batch_size, 64);
        assert_eq!(cfg.datagen.top_k, 300);
    }

    #[test]
    fn partial_files_fill_defaults_and_typos_fail() {
        let cfg = ExperimentConfig::from_toml(
            "mode = \"fedavg\"\nclients = 2\nepsilons = [1.0, 2.0]\nsweep = []\n[fed]\nrounds = 3\n[dataset]\nkind = \"moons\"\nsamples = 100\nnoise = 0.1\n",
        )
        .unwrap();
        assert_eq!(cfg.mode, Mode::Fedavg);
        assert_eq!(cfg.fed.rounds, 3);
        assert_eq!(cfg.fed.inner_steps, 5);
        assert!(ExperimentConfig::from_toml("clinets = 3").is_err());
        assert!(ExperimentConfig::from_toml("clients = 2").is_err());
        assert_eq!("local_secret".parse::<Mode>().unwrap(), Mode::LocalSecret);
        assert!("nope".parse::<Mode>().is_err());
    }
}
