//! Variance estimation for fine-stratification surveys.
//!
//! Fine stratification selects one or two primary sampling units (PSUs) per
//! stratum, which makes the Horvitz-Thompson mean unbiased but leaves its
//! design variance inestimable by the textbook formula. This crate implements
//! the standard workarounds and a Bayesian alternative:
//!
//! * collapsed-strata estimation over pseudo-strata ([`estimators`]),
//! * the kernel-weighted neighborhood estimator with Epanechnikov weights
//!   ([`estimators`]),
//! * a hierarchical model that smooths stratum means and log-variances with a
//!   shared truncated power spline basis, fit by Metropolis-within-Gibbs under
//!   a weighted pseudo-likelihood ([`bayes`]),
//! * synthetic populations, stratified designs, and truth oracles for
//!   evaluating all of the above ([`population`], [`design`]),
//! * a seeded, parallel Monte Carlo replication harness ([`simulation`]).

pub mod bayes;
pub mod design;
pub mod error;
pub mod estimators;
pub mod io;
pub mod population;
pub mod rng;
pub mod simulation;
pub mod spline;

pub use error::{Error, Result};
