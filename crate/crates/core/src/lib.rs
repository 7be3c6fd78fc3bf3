//! Tempered Bayesian posteriors, split-kl concentration inequalities and the
//! Recursive PAC-Bayes bound.
//!
//! The crate is organised by subsystem:
//!
//! - [`conc`]: Bernoulli kl, its inverses, split-kl and PAC-Bayes bounds,
//!   plus Monte Carlo coverage harnesses.
//! - [`templin`]: exact tempered Bayesian linear regression and the
//!   cold-posterior diagnostics built on it.
//! - [`transforms`]: tempered likelihoods, induced priors and the grid
//!   oracle showing a tempered posterior is an ordinary posterior.
//! - [`pmodel`]: mean-field Gaussian classifiers with hand-written
//!   reverse-mode gradients and an SGD-with-momentum trainer.
//! - [`rpb`]: split plans, chain training, recursive bound evaluation,
//!   baselines and the implied temperature.
//! - [`elbo`]: the mixture / mutual-information decomposition of a
//!   mean-field KL, checked by quadrature.
//! - [`data`]: IDX parsing, synthetic blobs, seeded splits.
//!
//! Monte Carlo loops run on rayon when the `parallel` feature is on (the
//! default). Every random stream is keyed by an item index, so results do
//! not depend on the thread count.

pub mod conc;
pub mod data;
pub mod elbo;
mod error;
pub mod exec;
pub mod pmodel;
pub mod rpb;
pub mod templin;
pub mod transforms;

pub use error::{Error, Result};
