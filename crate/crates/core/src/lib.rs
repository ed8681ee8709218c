//! Allocation multiplicity simulator.
//!
//! When `k` scarce resources go to `n` candidates of whom `n'` are qualified, a huge
//! number of allocations reach the same realized utility `k'/k`. This crate counts and
//! samples that equal-utility space exactly, trains families of near-optimal models
//! (the empirical Rashomon set), maps their predictions to allocations with top-k and
//! lottery mappings, and measures how much of the equal-utility space those allocations
//! actually cover.
//!
//! Module map:
//!
//! - [`domain`]: candidate pools, allocations, prediction vectors, equal-utility spaces.
//! - [`combinatorics`]: exact big-integer counts, uniform sampling of the space,
//!   closed-form statistics and the least-discriminatory reference allocation.
//! - [`learners`]: logistic regression, feed-forward networks and integer scoring
//!   systems trained by cross-entropy minimization.
//! - [`rashomon`]: the four model-sampling methods and the loss-tolerance filter.
//! - [`mappings`]: top-k, decision-boundary lottery and sigmoid-logit lottery.
//! - [`metrics`]: utility, threshold-test ratio, pairwise consistency, outcome
//!   profiles, age entropy, ensemble allocations, grouped risk summaries.
//! - [`data`]: CSV ingestion, synthetic generator, split/draw protocol.
//! - [`runner`]: experiment orchestration, archive layout and figure data.

#![forbid(unsafe_code)]
// `!(x > 0.0)` style checks deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod combinatorics;
pub mod data;
pub mod domain;
pub mod error;
pub mod learners;
pub mod mappings;
pub mod metrics;
pub mod rashomon;
pub mod runner;
pub mod seed;

pub use error::{Error, Result};
