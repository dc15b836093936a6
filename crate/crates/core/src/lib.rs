//! Debiased instrumental-variable regression with K-fold cross-fitting.
//!
//! The crate is organised around the estimation pipeline:
//!
//! * [`datagen`] builds synthetic benchmarks with closed-form ground truth.
//! * [`learners`] holds the in-repo supervised learners (feed-forward nets,
//!   gradient-boosted trees, mixture density networks).
//! * [`estimation`] implements the orthogonal two-stage estimator, its
//!   single-fit variant and the non-orthogonal baseline.
//! * [`bandit`] extracts greedy pricing policies and scores them against the
//!   oracle policy.
//! * [`diagnostics`] checks orthogonality, instrument relevance and empirical
//!   convergence rates.

#![deny(unsafe_code)]
// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bandit;
pub mod datagen;
pub mod diagnostics;
pub mod error;
pub mod estimation;
pub mod learners;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};

/// Library version stamped into reports and model files.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
