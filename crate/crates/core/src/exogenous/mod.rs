//! Time-evolving exposures and latent hazard processes.
//!
//! Survival given an observed exposure record is an expectation over the
//! conditional law of a Gaussian path, `E[h(X(t)) exp(-∫₀ᵗ h(X(s)) ds) | X(ts) = x]`,
//! evaluated here by Monte Carlo over conditional paths on a fine grid with
//! trapezoid hazard integration. The [`finite`] submodule holds exact
//! enumeration checkers for vitality and independent evolution.

mod engine;
pub mod exposure;
pub mod finite;
pub mod latent;
pub mod probe;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use engine::ConditionalPaths;
pub use exposure::{
    exposure_record_loglik, survival_density_given_exposure, survivor_given_exposure, ExposureHealth,
    ExposureLoglik, ExposureMean, ExposureModel, ExposureRecord,
};
pub use finite::{
    conditionally_independent_given_initial, independent_evolution_check, processes_independent, vitality_check,
    Component, EvolutionSpec, EvolutionVerdict, VitalitySpec, VitalityVerdict,
};
pub use latent::{latent_conditional_survivor, LatentJointModel};
pub use probe::{exogeneity_probe, ProbeModel, ProbeReport};

/// Nonnegative hazard as a function of the current exposure.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum HazardLink {
    /// `exp(a + b x)`.
    LogLinear { a: f64, b: f64 },
    /// `max(0, a + b x)`. Truncation at zero biases the hazard upwards
    /// wherever the path dips below `-a / b`.
    Identity { a: f64, b: f64 },
}

impl HazardLink {
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            HazardLink::LogLinear { a, b } => (a + b * x).exp(),
            HazardLink::Identity { a, b } => (a + b * x).max(0.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (HazardLink::LogLinear { a, b } | HazardLink::Identity { a, b }) = *self;
        if a.is_finite() && b.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidParameter("hazard link coefficients must be finite".into()))
        }
    }
}

/// How standard normal vectors are generated.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Sampling {
    /// Independent pseudo-random draws in fixed-size chunks, each chunk with
    /// its own stream.
    Pseudo,
    /// Randomly shifted Korobov lattice; the error estimate comes from the
    /// spread across `shifts` independent shifts.
    Lattice { shifts: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MCConfig {
    pub paths: usize,
    /// Number of trapezoid intervals on `[0, t]`.
    pub grid_intervals: usize,
    pub seed: u64,
    pub sampling: Sampling,
    /// Log-likelihood evaluations whose Monte Carlo standard error exceeds
    /// this fraction of the absolute value log a precision warning.
    pub warn_rel_se: f64,
}

impl Default for MCConfig {
    fn default() -> Self {
        MCConfig {
            paths: 10_000,
            grid_intervals: 200,
            seed: 0,
            sampling: Sampling::Pseudo,
            warn_rel_se: 0.01,
        }
    }
}

impl MCConfig {
    pub fn validate(&self) -> Result<()> {
        if self.paths < 1 || self.grid_intervals < 1 {
            return Err(Error::InvalidParameter("paths and grid_intervals must be >= 1".into()));
        }
        if let Sampling::Lattice { shifts } = self.sampling {
            if shifts < 2 || shifts > self.paths {
                return Err(Error::InvalidParameter("lattice sampling needs 2 <= shifts <= paths".into()));
            }
        }
        Ok(())
    }
}

/// Monte Carlo estimate with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub se: f64,
    pub paths: usize,
}
