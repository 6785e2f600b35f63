//! Privacy-preserving personalized federated learning on synthetic data.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attack;
pub mod data;
pub mod datagen;
pub mod digest;
pub mod dp;
pub mod fed;
pub mod harness;
pub mod nn;
pub mod rng;
pub mod tensor;

pub use tensor::{Tensor, TensorError};

#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/intro.md")]
    struct Intro;
    #[doc = include_str!("../../../book/src/compression.md")]
    struct Compression;
    #[doc = include_str!("../../../book/src/accounting.md")]
    struct Accounting;
    #[doc = include_str!("../../../book/src/aggregation.md")]
    struct Aggregation;
    #[doc = include_str!("../../../book/src/synthetic.md")]
    struct Synthetic;
    #[doc = include_str!("../../../book/src/leakage.md")]
    struct Leakage;
    #[doc = include_str!("../../../book/src/running.md")]
    struct Running;
    #[doc = include_str!("../../../README.md")]
    struct Readme;
}
