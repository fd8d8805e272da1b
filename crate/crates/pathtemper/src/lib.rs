//! Adaptive path sampling for log normalizing constants as a function of a
//! continuous auxiliary parameter, with two metastable-sampling drivers on
//! top: continuous simulated tempering for energetic barriers and an implicit
//! divide-and-conquer scheme for entropic (funnel) barriers.
//!
//! The pieces compose bottom-up:
//! - [`model`] / [`fixtures`]: unconstrained log densities with gradients;
//! - [`link`] / [`joint`]: the piecewise-cubic temperature link and the joint
//!   tempered density on (a, theta);
//! - [`hmc`]: the gradient-based sampler (dynamic trajectories, dual
//!   averaging, diagonal mass adaptation);
//! - [`estimator`]: pointwise thermodynamic gradients, trapezoidal
//!   integration, kernel-basis smoothing, marginal estimation;
//! - [`diagnostics`]: generalized Pareto tail fits, the Pareto-k stopping
//!   rule, rank-normalized split R-hat and bulk/tail ESS;
//! - [`temper`] / [`idc`]: the two adaptive drivers;
//! - [`baselines`]: discrete-tempering comparators and exact references.

pub mod baselines;
pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod estimator;
pub mod fixtures;
pub mod hmc;
pub mod idc;
pub mod joint;
pub mod link;
pub mod model;
pub mod output;
pub mod pseudo_prior;
pub mod store;
pub mod temper;

#[doc(hidden)]
pub mod testutil;

pub use error::{Error, Result};
