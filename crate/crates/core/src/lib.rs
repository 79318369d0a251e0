//! Gaussian survival processes for vital health variables.
//!
//! A purely vital health process takes values in the reals while the patient
//! is alive and in an absorbing state (`Flat`) after death. Given the survival
//! time `T = t`, the health values on `[0, t)` are Gaussian with mean
//! `alpha(t) + m(t - s) + beta_arm` and a stationary covariance made of a
//! random intercept, a temporal kernel and white noise.
//!
//! The crate covers
//! - parametric survival families ([`survival`]),
//! - the conditional Gaussian law of health given survival ([`revival`]),
//! - joint and marginal finite-dimensional densities ([`density`]),
//! - record and dataset likelihoods, staged and joint estimation ([`likelihood`]),
//! - simulation under fixed and sequential appointment schemes ([`simulate`]),
//! - exogenous exposure models, Monte Carlo Gaussian integrals and exact
//!   checkers for vitality and independent evolution ([`exogenous`]).

pub mod data;
pub mod density;
pub mod error;
pub mod exogenous;
pub mod io;
pub mod likelihood;
pub mod linalg;
pub mod optimize;
pub mod params;
pub mod quadrature;
pub mod revival;
pub mod rng;
pub mod simulate;
pub mod survival;

pub use data::{Covariate, Dataset, PatientRecord, StateValue, Terminal, Violation};
pub use density::{LogDensity, QuadratureConfig};
pub use error::{Error, Result};
pub use params::ModelParams;
pub use revival::{CovarianceModel, MeanModel, RevivalModel, TemporalKernel};
pub use survival::{FamilyKind, SurvivalFamily};
