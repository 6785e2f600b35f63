//! Privacy sweeps and incentive reports.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::experiment::run_experiment;
use super::metrics::IncentiveReport;
use super::plot::{chart, Series, Style};
use super::{AtStage, HarnessError, Stage};

/// One cell of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub level: String,
    pub seed: u64,
    pub mean_epsilon: f64,
    pub dp_enabled: bool,
    pub bmta: f64,
    pub bmt_f1: f64,
}

/// Runs every level of `cfg.sweep` for every seed in `cfg.sweep_seeds` and
/// writes `sweep.csv` and `sweep.svg` into `out_root`.
pub fn run_sweep(cfg: &ExperimentConfig, out_root: &Path) -> Result<Vec<SweepRow>, HarnessError> {
    cfg.validate()?;
    if cfg.sweep.is_empty() || cfg.sweep_seeds.is_empty() {
        return Err(HarnessError::Config(
            "sweep needs at least one level and one seed".into(),
        ));
    }
    let mut rows = Vec::new();
    for level in &cfg.sweep {
        for &seed in &cfg.sweep_seeds {
            let run = run_experiment(&cfg.for_level(level, seed), out_root)?;
            let s = &run.summary;
            rows.push(SweepRow {
                level: level.name.clone(),
                seed,
                mean_epsilon: level.epsilons.iter().sum::<f64>() / level.epsilons.len() as f64,
                dp_enabled: level.dp_enabled,
                bmta: s.bmta.unwrap_or(f64::NAN),
                bmt_f1: s.bmt_f1.unwrap_or(f64::NAN),
            });
        }
    }
    std::fs::create_dir_all(out_root).at(Stage::Output)?;
    let mut w = csv::Writer::from_path(out_root.join("sweep.csv")).at(Stage::Output)?;
    for r in &rows {
        w.serialize(r).at(Stage::Output)?;
    }
    w.flush().at(Stage::Output)?;

    // Noise-free levels sit one step right of the largest budget.
    let top = rows
        .iter()
        .filter(|r| r.dp_enabled)
        .map(|r| r.mean_epsilon)
        .fold(0.0, f64::max);
    let series: Vec<Series> = cfg
        .sweep
        .iter()
        .map(|level| {
            let pts = rows
                .iter()
                .filter(|r| r.level == level.name)
                .map(|r| (if r.dp_enabled { r.mean_epsilon } else { top + 1.0 }, r.bmta))
                .collect();
            Series::new(level.name.clone(), pts)
        })
        .collect();
    let svg = chart(
        "BMTA by privacy level",
        "mean client budget",
        "BMTA",
        &series,
        Style::Points,
    );
    std::fs::write(out_root.join("sweep.svg"), svg).at(Stage::Output)?;
    Ok(rows)
}

/// Writes `incentive.csv` (one row per client) and `incentive.svg`.
pub fn write_incentive(report: &IncentiveReport, dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).at(Stage::Output)?;
    let mut w = csv::Writer::from_path(dir.join("incentive.csv")).at(Stage::Output)?;
    w.write_record(["client_id", "local", "federated", "gain"])
        .at(Stage::Output)?;
    for (i, ((l, f), g)) in report
        .local
        .iter()
        .zip(&report.federated)
        .zip(&report.gains)
        .enumerate()
    {
        w.write_record([i.to_string(), l.to_string(), f.to_string(), g.to_string()])
            .at(Stage::Output)?;
    }
    w.flush().at(Stage::Output)?;
    let pts = report.local.iter().copied().zip(report.gains.iter().copied()).collect();
    let title = format!("Gain from participating (Spearman {:.2})", report.spearman);
    let svg = chart(
        &title,
        "local accuracy",
        "gain",
        &[Series::new("client", pts)],
        Style::Points,
    );
    std::fs::write(dir.join("incentive.svg"), svg).at(Stage::Output)?;
    Ok(())
}
