//! Experiment configuration, the end-to-end pipeline, metrics, sweeps and
//! plots.
//!
//! A run is a pure function of its [`ExperimentConfig`]: the output directory
//! is named by the config hash and re-running writes byte-identical metrics.

mod config;
mod experiment;
mod metrics;
pub mod plot;
mod sweep;

use std::fmt;

use thiserror::Error;

pub use config::{DatasetSpec, ExperimentConfig, Mode, SweepLevel};
pub use experiment::{
    build_clients, client_synthetic, load_dataset, model_spec, run_experiment, ClientSplits, MetricsTable,
    RunArtifacts, RunSummary,
};
pub use metrics::{accuracy, compute_bmta, compute_macro_f1, incentive_report, spearman, IncentiveReport};
pub use sweep::{run_sweep, write_incentive, SweepRow};

/// Pipeline stage named in diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Data,
    Datagen,
    Federation,
    Evaluation,
    Output,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Config => "config",
            Stage::Data => "data",
            Stage::Datagen => "datagen",
            Stage::Federation => "federation",
            Stage::Evaluation => "evaluation",
            Stage::Output => "output",
        })
    }
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("{stage} stage: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
    #[error("metric: {0}")]
    Metric(String),
}

impl HarnessError {
    pub fn stage(&self) -> Option<Stage> {
        match self {
            HarnessError::Config(_) => Some(Stage::Config),
            HarnessError::Stage { stage, .. } => Some(*stage),
            HarnessError::Metric(_) => Some(Stage::Evaluation),
        }
    }
}

/// Tags an error with the stage it came from.
pub(crate) trait AtStage<T> {
    fn at(self, stage: Stage) -> Result<T, HarnessError>;
}

impl<T, E: std::error::Error + Send + Sync + 'static> AtStage<T> for Result<T, E> {
    fn at(self, stage: Stage) -> Result<T, HarnessError> {
        self.map_err(|e| HarnessError::Stage {
            stage,
            source: Box::new(e),
        })
    }
}
