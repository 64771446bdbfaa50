//! Privacy arithmetic for Gaussian mechanisms.
//!
//! * [`gaussian`]: the exact (ε, δ) curve of a (composed) Gaussian mechanism
//!   in Gaussian-DP form.
//! * [`pld`]: discretized privacy loss distributions for the Poisson
//!   subsampled Gaussian mechanism, composed by FFT convolution.
//! * [`rdp`]: a Rényi-DP accountant used as an independent upper bound.
//! * [`accountant`]: ε for a training run and noise calibration on a 0.1 grid.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod accountant;
mod error;
pub mod gaussian;
pub mod normal;
pub mod pld;
pub mod rdp;

pub use accountant::{
    calibrate_sigma, epsilon_of, pld_compose, pld_of_subsampled_gaussian, AccountingConfig,
    SubsampledGaussianSpec,
};
pub use error::{PrivacyError, Result};
pub use gaussian::{
    compose_gaussians, gdp_delta, gdp_epsilon, GaussianMechanismSpec, GdpParameter,
    PrivacyBudget,
};
pub use pld::PrivacyLossDistribution;
pub use rdp::rdp_epsilon;
