use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pppfl::attack::{run_attack_demo, AttackDemoConfig};
use pppfl::harness::{
    build_clients, client_synthetic, incentive_report, load_dataset, run_experiment, run_sweep, write_incentive,
    ExperimentConfig, HarnessError, Mode, RunSummary, Stage,
};

#[derive(Parser)]
#[command(
    name = "pppfl",
    version,
    about = "Personalized privacy-preserving federated learning simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config in TOML; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// One of pppfl, fedmeta, fedavg, local_secret, local_synthetic, collab_secret.
    #[arg(long)]
    mode: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train private generators and write synthetic datasets with their accountant audit.
    Datagen(Common),
    /// Run one experiment.
    Train(Common),
    /// Run the privacy sweep.
    Sweep(Common),
    /// Gradient-leakage demonstrations.
    Attack {
        /// Attack settings in TOML; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
    /// Summarize run directories; with a baseline, add the incentive analysis.
    Report {
        #[arg(long = "run", required = true)]
        runs: Vec<PathBuf>,
        /// Run whose per-client accuracy counts as the local baseline.
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long, default_value = "report")]
        out: PathBuf,
    },
}

struct Failure {
    config: Option<PathBuf>,
    error: HarnessError,
}

impl From<HarnessError> for Failure {
    fn from(error: HarnessError) -> Self {
        Failure { config: None, error }
    }
}

fn load(common: &Common) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(m) = &common.mode {
        cfg.mode = m.parse::<Mode>()?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn output<E: std::error::Error + Send + Sync + 'static>(e: E) -> HarnessError {
    HarnessError::Stage {
        stage: Stage::Output,
        source: Box::new(e),
    }
}

fn datagen(cfg: &ExperimentConfig, out: &Path) -> Result<(), HarnessError> {
    let data = load_dataset(&cfg.dataset)?;
    let dir = out.join(format!("datagen-{}", &cfg.hash()[..16]));
    std::fs::create_dir_all(&dir).map_err(output)?;
    for c in build_clients(cfg, &data)? {
        let (synth, report, acc) = client_synthetic(cfg, &c, None)?;
        let base = dir.join(format!("client{}", c.id));
        synth.save(&base.with_extension("ppsd")).map_err(output)?;
        synth.save_csv(&base.with_extension("csv")).map_err(output)?;
        let text = serde_json::to_string_pretty(&report).map_err(output)?;
        std::fs::write(base.with_extension("report.json"), text).map_err(output)?;
        acc.save(&base.with_extension("accountant.json")).map_err(output)?;
        let spent = report
            .epsilon_spent
            .map_or_else(|| "no noise".to_string(), |e| format!("{e:.4}"));
        println!(
            "client {}: {} samples, {} aggregations, epsilon spent {spent} of {}",
            c.id,
            synth.len(),
            report.total_aggregations(),
            report.epsilon_target
        );
    }
    println!("{}", dir.display());
    Ok(())
}

fn read_summary(dir: &Path) -> Result<RunSummary, HarnessError> {
    let bytes =
        std::fs::read(dir.join("summary.json")).map_err(|e| HarnessError::Config(format!("{}: {e}", dir.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| HarnessError::Config(format!("{}: {e}", dir.display())))
}

fn report(runs: &[PathBuf], baseline: Option<&Path>, out: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(out).map_err(output)?;
    let mut w = csv::Writer::from_path(out.join("report.csv")).map_err(output)?;
    w.write_record([
        "run",
        "mode",
        "seed",
        "bmta",
        "bmt_f1",
        "final_mean_accuracy",
        "diverged_at",
    ])
    .map_err(output)?;
    let fmt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
    let mut summaries = Vec::new();
    for dir in runs {
        let s = read_summary(dir)?;
        println!(
            "{}  {:<16} seed {:<4} BMTA {:<8} BMT-F1 {}",
            dir.display(),
            s.mode.name(),
            s.seed,
            s.bmta.map_or("-".into(), |v| format!("{v:.4}")),
            s.bmt_f1.map_or("-".into(), |v| format!("{v:.4}"))
        );
        w.write_record([
            dir.display().to_string(),
            s.mode.name().to_string(),
            s.seed.to_string(),
            fmt(s.bmta),
            fmt(s.bmt_f1),
            fmt(s.final_mean_accuracy),
            s.diverged_at.map_or_else(String::new, |r| r.to_string()),
        ])
        .map_err(output)?;
        summaries.push(s);
    }
    w.flush().map_err(output)?;
    if let Some(b) = baseline {
        let local = read_summary(b)?;
        for s in &summaries {
            let inc = incentive_report(&local.client_accuracy, &s.client_accuracy)?;
            let dir = out.join(format!("incentive-{}-{}", s.mode.name(), s.seed));
            write_incentive(&inc, &dir)?;
            println!("incentive vs {}: spearman {:.3}", b.display(), inc.spearman);
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    let with_path = |config: &Option<PathBuf>| {
        let config = config.clone();
        move |error: HarnessError| Failure {
            config: config.clone(),
            error,
        }
    };
    match cli.command {
        Command::Datagen(c) => {
            let cfg = load(&c).map_err(with_path(&c.config))?;
            datagen(&cfg, &c.out).map_err(with_path(&c.config))
        }
        Command::Train(c) => {
            let cfg = load(&c).map_err(with_path(&c.config))?;
            let run = run_experiment(&cfg, &c.out).map_err(with_path(&c.config))?;
            let s = &run.summary;
            println!(
                "{} seed {}: BMTA {} BMT-F1 {}{}",
                s.mode.name(),
                s.seed,
                s.bmta.map_or("-".into(), |v| format!("{v:.4}")),
                s.bmt_f1.map_or("-".into(), |v| format!("{v:.4}")),
                s.diverged_at
                    .map_or(String::new(), |r| format!(" (diverged at round {r})"))
            );
            println!("{}", run.dir.display());
            Ok(())
        }
        Command::Sweep(c) => {
            let cfg = load(&c).map_err(with_path(&c.config))?;
            for r in run_sweep(&cfg, &c.out).map_err(with_path(&c.config))? {
                println!(
                    "{:<12} seed {:<4} BMTA {:.4} BMT-F1 {:.4}",
                    r.level, r.seed, r.bmta, r.bmt_f1
                );
            }
            println!("{}", c.out.join("sweep.csv").display());
            Ok(())
        }
        Command::Attack { config, seed, out } => {
            let wrap = with_path(&config);
            let mut cfg = match &config {
                Some(p) => AttackDemoConfig::load(p).map_err(&wrap)?,
                None => AttackDemoConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let summary = run_attack_demo(&cfg, &out).map_err(&wrap)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&summary).map_err(|e| wrap(output(e)))?
            );
            Ok(())
        }
        Command::Report { runs, baseline, out } => Ok(report(&runs, baseline.as_deref(), &out)?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure { config, error }) => {
            let stage = error.stage().map_or("?".to_string(), |s| s.to_string());
            match config {
                Some(p) => eprintln!("error [{stage}] {}: {error}", p.display()),
                None => eprintln!("error [{stage}]: {error}"),
            }
            ExitCode::from(2)
        }
    }
}
