//! Laboratory for studying congestion in two-sided matching platforms.
//!
//! The crate covers the full experiment pipeline:
//! - synthetic market and search-log generation under a shared-tiebreak
//!   status-quo ranking ([`synth`]),
//! - two-stage discrete-choice estimation of request utility and click
//!   propensity via a rank-ordered logit with ties ([`tielogit`],
//!   [`estimate`]),
//! - counterfactual reranking policies (personalized, random, alpha-blend)
//!   with deterministic choice prediction ([`counterfact`]),
//! - congestion and utility metrics: Lorenz curves, Gini coefficients and
//!   utility-congestion frontier sweeps ([`metrics`]),
//! - user clustering on implicit search-filter frequencies ([`cluster`]).
//!
//! Everything is deterministic given a seed; randomness comes from
//! counter-based streams keyed by entity ids so output does not depend on
//! worker scheduling.

pub mod cluster;
pub mod config;
pub mod counterfact;
pub mod dataset;
pub mod domain;
pub mod error;
pub mod estimate;
pub mod metrics;
pub mod optim;
pub mod rngutil;
pub mod synth;
pub mod tielogit;

pub use error::{Error, Result};
