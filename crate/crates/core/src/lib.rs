//! Transport survival treatment effects from an individual-level source trial
//! to a target population described only by aggregate covariate moments.
//!
//! The pipeline combines two weight layers: participation weights from a
//! method-of-moments exponential-tilting solve against the target moments, and
//! time-varying inverse-probability-of-censoring weights from a Cox model of
//! the censoring hazard. Their (optionally quantile-capped) product feeds a
//! marginal structural Cox model whose treatment coefficient is the transported
//! log hazard ratio; inference is by nonparametric bootstrap.
//!
//! Modules:
//! - [`survival`]: Cox partial-likelihood fitting, Breslow baseline hazard,
//!   weighted Kaplan-Meier, Weibull inverse-transform sampling.
//! - [`weights`]: participation weights, censoring weights, final weights.
//! - [`estimator`]: the end-to-end pipeline and bootstrap inference.
//! - [`simulation`]: data-generating mechanisms and the Monte Carlo harness.
//! - [`io`]: dataset ingestion, config parsing, result serialization.

pub mod error;
pub mod estimator;
pub mod io;
pub mod rng;
pub mod simulation;
pub mod stats;
pub mod survival;
pub mod weights;

pub use error::{Error, Result};
