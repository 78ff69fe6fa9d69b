//! Determined blind source separation by primal-dual splitting.
//!
//! The toolkit estimates per-frequency demixing matrices for multichannel
//! time-frequency mixtures. A generic splitting loop alternates a
//! singular-value prox enforcing invertibility with a pluggable shrinkage
//! step: either the exact proximity operator of a sparsity penalty, or any
//! data-dependent time-frequency mask. The harmonic mask (cepstrum
//! thresholding combined with a Wiener-like power ratio) turns the loop
//! into harmonic vector analysis.
//!
//! Pipeline: [`signal::stft`] -> [`linops::whiten`] -> [`solver::solve`] ->
//! [`linops::DataOperator::apply`] -> [`linops::back_project`] ->
//! [`signal::istft`], with evaluation in [`metrics`] and synthetic scenarios
//! in [`mixgen`].

pub mod error;
pub mod linops;
pub mod masks;
pub mod metrics;
pub mod mixgen;
pub mod prox;
pub mod signal;
pub mod solver;
pub mod trace;
pub mod wav;

pub use error::{BssError, Result};
