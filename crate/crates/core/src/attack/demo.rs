//! End-to-end leakage demonstrations.

use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::leakage::nearest_distance;
use super::{evaluate_leakage, gallery_svg, install_trap, l2_distance, reconstruct_all, trap_weight_init};
use super::{AttackError, LeakageReport};
use crate::data::LabeledDataset;
use crate::fed::{client_update, ClientState, DataSource, FederationData, SecretSplits};
use crate::harness::{
    build_clients, client_synthetic, load_dataset, model_spec, AtStage, ExperimentConfig, HarnessError, Stage,
};
use crate::nn::{self, NetworkSpec, ParamSet};
use crate::rng::{domain, substream, Rng};
use crate::tensor::Tensor;

/// Settings of the three demonstrations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackDemoConfig {
    pub seed: u64,
    /// Batch-of-one victims with random weights.
    pub victims: usize,
    pub victim_input: usize,
    pub victim_hidden: usize,
    pub victim_classes: usize,
    /// Seeds of the trap versus random-init comparison.
    pub trap_trials: usize,
    pub trap_batch: usize,
    pub trap_neurons: usize,
    pub trap_input: usize,
    /// Relative residual that counts as an exact recovery.
    pub exact_tol: f64,
    /// Absolute distance that counts as a match with a reference sample.
    pub match_tol: f64,
    /// Query batch of the attacked federation client.
    pub containment_batch: usize,
    /// Image pairs drawn per gallery.
    pub gallery_size: usize,
    /// Federation whose client 0 is attacked.
    pub experiment: ExperimentConfig,
}

impl Default for AttackDemoConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            victims: 50,
            victim_input: 32,
            victim_hidden: 16,
            victim_classes: 4,
            trap_trials: 20,
            trap_batch: 8,
            trap_neurons: 64,
            trap_input: 32,
            exact_tol: 1e-6,
            match_tol: 1e-3,
            containment_batch: 8,
            gallery_size: 8,
            experiment: ExperimentConfig::desk(),
        }
    }
}

impl AttackDemoConfig {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let cfg: Self = toml::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let sizes = [
            self.victim_input,
            self.victim_hidden,
            self.victim_classes,
            self.trap_batch,
            self.trap_neurons,
            self.trap_input,
            self.containment_batch,
        ];
        if sizes.contains(&0) || self.victim_classes < 2 {
            return Err(HarnessError::Config(
                "attack sizes must be positive, with at least 2 classes".into(),
            ));
        }
        if !(self.exact_tol > 0.0 && self.match_tol > 0.0) {
            return Err(HarnessError::Config("tolerances must be positive".into()));
        }
        self.experiment.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchOneSummary {
    pub victims: usize,
    /// Victims with at least one fired neuron.
    pub attackable: usize,
    pub max_residual: f64,
    /// Secret match rate of the recoveries against the victims' inputs.
    pub secret_match_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrapSummary {
    pub trials: usize,
    pub batch: usize,
    pub neurons: usize,
    /// Distinct batch samples recovered exactly, summed over trials.
    pub trap_exact: usize,
    pub random_exact: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClientAttackSummary {
    pub query_batch: usize,
    pub recovered: usize,
    /// Distinct query samples recovered exactly.
    pub exact: usize,
    pub secret_match_rate: f64,
    pub synthetic_match_rate: f64,
    pub nearest_synthetic_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttackSummary {
    pub dir: PathBuf,
    pub batch_one: BatchOneSummary,
    pub trap: TrapSummary,
    /// Synthetic samples lying within `match_tol` of a secret sample.
    pub synthetic_secret_duplicates: usize,
    /// Trapped federation client whose query batch is synthetic.
    pub pppfl: ClientAttackSummary,
    /// The same client uploading gradients of its secret data.
    pub plain_fl: ClientAttackSummary,
    pub plain_fl_batch_one: ClientAttackSummary,
}

fn gaussian_batch(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
    let data = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::from_raw(vec![rows, cols], data)
}

fn random_labels(n: usize, classes: usize, rng: &mut Rng) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..classes)).collect()
}

/// Gradient of a batch-1 random victim; returns recovered rows scored
/// against the input.
fn batch_one(cfg: &AttackDemoConfig, victim: usize) -> Result<super::ReconstructionResult, AttackError> {
    let mut rng = substream(cfg.seed, &[domain::ATTACK, 1, victim as u64]);
    let spec = NetworkSpec::mlp(&[cfg.victim_input, cfg.victim_hidden, cfg.victim_classes], true)?;
    let params = ParamSet::init(&spec, &mut rng);
    let x = gaussian_batch(1, cfg.victim_input, &mut rng);
    let y = random_labels(1, cfg.victim_classes, &mut rng);
    let (_, g) = nn::loss_and_grad(&spec, &params, &x, &y)?;
    reconstruct_all(&spec, &g)?.score(&x)
}

/// Exact recoveries of one batch with trap weights and with the plain init.
fn trap_trial(cfg: &AttackDemoConfig, trial: usize) -> Result<(usize, usize), AttackError> {
    let mut rng = substream(cfg.seed, &[domain::ATTACK, 2, trial as u64]);
    let spec = NetworkSpec::mlp(&[cfg.trap_input, cfg.trap_neurons, cfg.victim_classes], true)?;
    let random = ParamSet::init(&spec, &mut rng);
    let (mean, std) = (vec![0.0; cfg.trap_input], vec![1.0; cfg.trap_input]);
    let p = 1.0 - 1.0 / cfg.trap_batch as f64;
    let trap = trap_weight_init(cfg.trap_input, cfg.trap_neurons, &mean, &std, p, &mut rng)?;
    let trapped = install_trap(&spec, &random, &trap)?;
    let x = gaussian_batch(cfg.trap_batch, cfg.trap_input, &mut rng);
    let y = random_labels(cfg.trap_batch, cfg.victim_classes, &mut rng);
    let mut exact = [0; 2];
    for (slot, params) in exact.iter_mut().zip([&trapped, &random]) {
        let (_, g) = nn::loss_and_grad(&spec, params, &x, &y)?;
        *slot = reconstruct_all(&spec, &g)?.exact_count(&x, cfg.exact_tol);
    }
    Ok((exact[0], exact[1]))
}

/// Per-coordinate mean and standard deviation.
fn column_stats(x: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let n = x.rows() as f64;
    let mut mean = vec![0.0; x.cols()];
    for r in 0..x.rows() {
        for (m, v) in mean.iter_mut().zip(x.row(r)) {
            *m += v / n;
        }
    }
    let mut var = vec![0.0; x.cols()];
    for r in 0..x.rows() {
        for ((s, v), m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
            *s += (v - m).powi(2) / n;
        }
    }
    (mean, var.into_iter().map(f64::sqrt).collect())
}

fn split_query(ds: &LabeledDataset, batch: usize, rng: &mut Rng) -> (LabeledDataset, LabeledDataset) {
    let mut query: Vec<usize> = sample(rng, ds.len(), batch.min(ds.len() - 1)).into_vec();
    query.sort_unstable();
    let support: Vec<usize> = (0..ds.len()).filter(|i| query.binary_search(i).is_err()).collect();
    (ds.subset(&support), ds.subset(&query))
}

struct Victim<'a> {
    spec: &'a NetworkSpec,
    theta: &'a ParamSet,
    cfg: &'a AttackDemoConfig,
    secret: &'a SecretSplits,
    secret_all: &'a Tensor,
    synthetic: &'a Tensor,
    epsilon: f64,
}

impl Victim<'_> {
    /// Intercepts the client's round-1 upload and attacks it.
    fn attack(
        &self,
        support: LabeledDataset,
        query: LabeledDataset,
        source: DataSource,
    ) -> Result<(ClientAttackSummary, LeakageReport, Vec<Vec<f64>>), AttackError> {
        let truth = query.samples().clone();
        let batch = query.len();
        let state = ClientState::new(
            0,
            self.epsilon,
            FederationData { support, query, source },
            self.secret.clone(),
        )?;
        let upload = client_update(
            self.spec,
            self.theta,
            &state,
            &self.cfg.experiment.fed,
            self.cfg.seed,
            1,
        )?;
        let rec = reconstruct_all(self.spec, &upload.grad)?.score(&truth)?;
        let report = evaluate_leakage(&rec, self.secret_all, self.synthetic, self.cfg.match_tol)?;
        let summary = ClientAttackSummary {
            query_batch: batch,
            recovered: rec.samples.len(),
            exact: rec.exact_count(&truth, self.cfg.exact_tol),
            secret_match_rate: report.secret_match_rate,
            synthetic_match_rate: report.synthetic_match_rate,
            nearest_synthetic_rate: report.nearest_synthetic_rate,
        };
        Ok((summary, report, rec.samples))
    }
}

fn nearest_row(x: &[f64], set: &Tensor) -> Vec<f64> {
    let best = (0..set.rows())
        .min_by(|&a, &b| l2_distance(x, set.row(a)).total_cmp(&l2_distance(x, set.row(b))))
        .unwrap_or(0);
    set.row(best).to_vec()
}

/// Runs the batch-of-one, trap-amplification and federation-client attacks
/// and writes CSV reports, galleries and `summary.json` under
/// `out/attack-<config hash>`.
pub fn run_attack_demo(cfg: &AttackDemoConfig, out: &Path) -> Result<AttackSummary, HarnessError> {
    cfg.validate()?;
    let dir = out.join(format!("attack-{}", &crate::digest::config_hash(cfg)[..16]));
    std::fs::create_dir_all(&dir).at(Stage::Output)?;

    let mut w = csv::Writer::from_path(dir.join("batch_one.csv")).at(Stage::Output)?;
    w.write_record(["victim", "neuron", "residual"]).at(Stage::Output)?;
    let (mut attackable, mut max_residual, mut matched, mut recovered) = (0, 0.0f64, 0, 0);
    for v in 0..cfg.victims {
        let rec = batch_one(cfg, v).at(Stage::Evaluation)?;
        attackable += usize::from(!rec.samples.is_empty());
        for (n, r) in rec.neurons.iter().zip(&rec.residuals) {
            max_residual = max_residual.max(*r);
            recovered += 1;
            matched += usize::from(*r <= cfg.match_tol);
            w.write_record([v.to_string(), n.to_string(), r.to_string()])
                .at(Stage::Output)?;
        }
    }
    w.flush().at(Stage::Output)?;
    let batch_one = BatchOneSummary {
        victims: cfg.victims,
        attackable,
        max_residual,
        secret_match_rate: if recovered == 0 {
            0.0
        } else {
            matched as f64 / recovered as f64
        },
    };

    let mut w = csv::Writer::from_path(dir.join("trap.csv")).at(Stage::Output)?;
    w.write_record(["trial", "trap_exact", "random_exact"])
        .at(Stage::Output)?;
    let mut trap = TrapSummary {
        trials: cfg.trap_trials,
        batch: cfg.trap_batch,
        neurons: cfg.trap_neurons,
        trap_exact: 0,
        random_exact: 0,
    };
    for t in 0..cfg.trap_trials {
        let (a, b) = trap_trial(cfg, t).at(Stage::Evaluation)?;
        trap.trap_exact += a;
        trap.random_exact += b;
        w.write_record([t.to_string(), a.to_string(), b.to_string()])
            .at(Stage::Output)?;
    }
    w.flush().at(Stage::Output)?;

    let exp = &cfg.experiment;
    let data = load_dataset(&exp.dataset)?;
    let clients = build_clients(exp, &data)?;
    let client = &clients[0];
    let (synth, _, _) = client_synthetic(exp, client, Some(&out.join("cache")))?;
    let synth = synth.to_labeled("synthetic").at(Stage::Datagen)?;
    let secret = SecretSplits {
        train: client.train.clone(),
        val: client.val.clone(),
    };
    let secret_all = LabeledDataset::concat(&[&secret.train, &secret.val]).at(Stage::Data)?;
    let synthetic_secret_duplicates = (0..synth.len())
        .filter(|&r| nearest_distance(synth.samples().row(r), secret_all.samples()) <= cfg.match_tol)
        .count();

    let spec = model_spec(exp, data.dim(), data.n_classes())?;
    let neurons = spec
        .dense_layers()
        .next()
        .map(|(_, _, out, _)| out)
        .ok_or_else(|| HarnessError::Config("model has no dense layer".into()))?;
    let mut rng = substream(cfg.seed, &[domain::ATTACK, 3]);
    let init = ParamSet::init(&spec, &mut rng);
    let (mean, std) = column_stats(data.samples());
    let p = 1.0 - 1.0 / cfg.containment_batch as f64;
    let crafted = trap_weight_init(data.dim(), neurons, &mean, &std, p, &mut rng).at(Stage::Evaluation)?;
    let theta = install_trap(&spec, &init, &crafted).at(Stage::Evaluation)?;
    let victim = Victim {
        spec: &spec,
        theta: &theta,
        cfg,
        secret: &secret,
        secret_all: secret_all.samples(),
        synthetic: synth.samples(),
        epsilon: exp.epsilons[0],
    };

    let (support, query) = split_query(&synth, cfg.containment_batch, &mut rng);
    let (pppfl, pppfl_report, pppfl_samples) = victim
        .attack(support, query, DataSource::Synthetic)
        .at(Stage::Evaluation)?;
    let (support, query) = split_query(&secret.train, cfg.containment_batch, &mut rng);
    let (plain_fl, plain_report, plain_samples) = victim
        .attack(support, query, DataSource::Secret)
        .at(Stage::Evaluation)?;
    let (support, query) = split_query(&secret.train, 1, &mut rng);
    let (plain_fl_batch_one, _, _) = victim
        .attack(support, query, DataSource::Secret)
        .at(Stage::Evaluation)?;

    pppfl_report
        .write_csv(&dir.join("pppfl_leakage.csv"))
        .at(Stage::Output)?;
    plain_report
        .write_csv(&dir.join("plain_fl_leakage.csv"))
        .at(Stage::Output)?;
    if let Some(shape) = data.image_shape() {
        for (name, title, samples, reference) in [
            (
                "pppfl",
                "PPPFL client: recovered (left) and nearest synthetic sample",
                &pppfl_samples,
                synth.samples(),
            ),
            (
                "plain_fl",
                "Plain FL client: recovered (left) and nearest secret sample",
                &plain_samples,
                secret_all.samples(),
            ),
        ] {
            let pairs: Vec<_> = samples
                .iter()
                .take(cfg.gallery_size)
                .map(|s| (s.clone(), nearest_row(s, reference)))
                .collect();
            std::fs::write(
                dir.join(format!("{name}_gallery.svg")),
                gallery_svg(title, &pairs, shape),
            )
            .at(Stage::Output)?;
        }
    }

    let summary = AttackSummary {
        dir: dir.clone(),
        batch_one,
        trap,
        synthetic_secret_duplicates,
        pppfl,
        plain_fl,
        plain_fl_batch_one,
    };
    let text = serde_json::to_string_pretty(&summary).at(Stage::Output)?;
    std::fs::write(dir.join("summary.json"), text).at(Stage::Output)?;
    std::fs::write(dir.join("config.toml"), toml::to_string(cfg).at(Stage::Output)?).at(Stage::Output)?;
    Ok(summary)
}
