//! Differentially private synthetic data through teacher-guided generators.
//!
//! Every class of a client's data gets its own generator. The class data is
//! split across `N` teacher discriminators; each round the teachers score a
//! batch of generated samples, their input gradients are compressed to top-`k`
//! sign votes, summed with Gaussian noise and thresholded, and the generator
//! takes a regression step toward its own output shifted along the votes. The
//! noisy vote sum is the only access to private data and is charged to a
//! Rényi accountant; training stops before the class's share of the client
//! budget would be exceeded.

mod student;
mod synth;
mod teacher;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::DataError;
use crate::dp::{DpError, SignMode};
use crate::nn::{NnError, OptimizerKind};
use crate::tensor::TensorError;

pub use student::{dp_gradient_round, sample_latent, student_update, GeneratorSet, Provenance};
pub use synth::{synthesize, SyntheticDataset};
pub use teacher::{
    discriminator_loss, partition_disjoint, teacher_direction, teacher_directions, teacher_train_step, TeacherEnsemble,
};
pub use train::{train_dp_generator, ClassReport, DatagenOutput, DatagenReport, StopReason};

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("synthetic dataset file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Dp(#[from] DpError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Generator training settings for one client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DpGanConfig {
    /// Teachers per class; reduced to the class size when a class is smaller.
    pub n_teachers: usize,
    /// Coordinates kept per teacher vote.
    pub top_k: usize,
    /// Standard deviation of the Gaussian vote noise.
    pub noise_sigma: f64,
    /// Fraction of teachers whose net vote a coordinate needs to pass.
    pub vote_threshold: f64,
    /// Shift `γ` of the regression target along the votes.
    pub student_step: f64,
    pub generator_lr: f64,
    pub teacher_lr: f64,
    pub generator_optimizer: OptimizerKind,
    pub teacher_optimizer: OptimizerKind,
    /// Clip norm applied to teacher directions before quantization.
    pub clip_norm: f64,
    pub sign_mode: SignMode,
    /// Client budget; overridden per client by the experiment.
    pub epsilon_target: f64,
    pub delta: f64,
    pub latent_dim: usize,
    /// Synthetic samples (and therefore aggregations) per round.
    pub batch_size: usize,
    /// Teacher optimizer steps per round.
    pub steps_per_epoch: usize,
    /// Round cap per class; the only stopping rule when privacy is off.
    pub max_rounds: usize,
    pub teacher_hidden: Vec<usize>,
    pub generator_hidden: Vec<usize>,
    /// When false no noise is added and nothing is accounted.
    pub dp_enabled: bool,
}

impl Default for DpGanConfig {
    fn default() -> Self {
        Self {
            n_teachers: 40,
            top_k: 300,
            noise_sigma: 5000.0,
            vote_threshold: 0.7,
            student_step: 1.0,
            generator_lr: 1e-3,
            teacher_lr: 1e-3,
            generator_optimizer: OptimizerKind::Adam,
            teacher_optimizer: OptimizerKind::Adam,
            clip_norm: 1.0,
            sign_mode: SignMode::Stochastic,
            epsilon_target: 1.0,
            delta: 1e-5,
            latent_dim: 16,
            batch_size: 32,
            steps_per_epoch: 1,
            max_rounds: 200,
            teacher_hidden: vec![32],
            generator_hidden: vec![64],
            dp_enabled: true,
        }
    }
}

impl DpGanConfig {
    /// Checks ranges that do not depend on the data.
    pub fn validate(&self) -> Result<(), DatagenError> {
        let bad = |m: String| Err(DatagenError::InvalidConfig(m));
        if self.n_teachers < 2 {
            return bad(format!("n_teachers must be at least 2, got {}", self.n_teachers));
        }
        if !(self.vote_threshold > 0.0 && self.vote_threshold <= 1.0) {
            return bad(format!(
                "vote_threshold must lie in (0, 1], got {}",
                self.vote_threshold
            ));
        }
        if self.dp_enabled && !(self.noise_sigma > 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma must be positive, got {}", self.noise_sigma));
        }
        if self.dp_enabled && !(self.epsilon_target > 0.0) {
            return bad(format!("epsilon_target must be positive, got {}", self.epsilon_target));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta must lie in (0, 1), got {}", self.delta));
        }
        if self.top_k == 0 {
            return bad("top_k must be positive".into());
        }
        if self.latent_dim == 0 || self.batch_size == 0 {
            return bad("latent_dim and batch_size must be positive".into());
        }
        if !(self.clip_norm > 0.0) {
            return bad(format!("clip_norm must be positive, got {}", self.clip_norm));
        }
        for (name, v) in [
            ("student_step", self.student_step),
            ("generator_lr", self.generator_lr),
            ("teacher_lr", self.teacher_lr),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        Ok(())
    }

    /// Additionally checks `top_k` against the sample dimension.
    pub fn validate_for_dim(&self, dim: usize) -> Result<(), DatagenError> {
        self.validate()?;
        if self.top_k > dim {
            return Err(DatagenError::InvalidConfig(format!(
                "top_k = {} exceeds the sample dimension {dim}",
                self.top_k
            )));
        }
        Ok(())
    }
}
