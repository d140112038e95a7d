//! Deterministic federated-learning simulator for training under noisy labels.

pub mod augment;
pub mod data;
pub mod error;
pub mod federation;
pub mod harness;
pub mod losses;
pub mod model;
pub mod numerics;

pub use error::{Error, Result};

// The guide's code samples run as doc-tests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;
    #[doc = include_str!("../../../book/src/noisy-labels.md")]
    struct NoisyLabels;
    #[doc = include_str!("../../../book/src/predictions.md")]
    struct Predictions;
    #[doc = include_str!("../../../book/src/losses.md")]
    struct Losses;
    #[doc = include_str!("../../../book/src/federation.md")]
    struct Federation;
    #[doc = include_str!("../../../book/src/experiments.md")]
    struct Experiments;
    #[doc = include_str!("../../../book/src/determinism.md")]
    struct Determinism;
    #[doc = include_str!("../../../README.md")]
    struct Readme;
}
