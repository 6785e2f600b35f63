//! Differential-privacy mechanisms for teacher-vote aggregation, and their
//! accounting.
//!
//! The pipeline for one query is: each teacher's dense gradient is compressed
//! to a top-`k` sign vector ([`topk_sign_compress`]), the vectors are summed
//! with Gaussian noise ([`dp_sum_aggregate`]), and the noisy sum is cut at a
//! vote threshold ([`threshold_votes`]). Only the noisy sum touches private
//! data, so it is the only step charged to the [`RdpAccountant`].

mod accountant;
mod aggregate;
mod compress;

use thiserror::Error;

pub use accountant::{default_lambda_grid, l2_sensitivity_topk, rdp_gaussian, rdp_to_dp, PrivacyBudget, RdpAccountant};
pub use aggregate::{dp_sum_aggregate, threshold_votes};
pub use compress::{topk_sign_compress, SignMode, SparseSignVec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DpError {
    #[error("top-k of {k} exceeds dimension {dim}")]
    TopKTooLarge { k: usize, dim: usize },
    #[error("vector {index} has dimension {found}, expected {expected}")]
    DimensionMismatch {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("δ must lie in (0, 1), got {0}")]
    InvalidDelta(f64),
    #[error("σ = 0 gives unbounded privacy loss")]
    InfinitePrivacyLoss,
    #[error("the RDP order grid is empty")]
    EmptyGrid,
    #[error("privacy budget exhausted: spending would reach ε = {would_reach:.6} > target {target}")]
    BudgetExhausted { would_reach: f64, target: f64 },
    #[error("malformed accountant file: {0}")]
    Format(String),
    #[error("{0}")]
    InvalidArgument(String),
}
