//! Latent hazard process observed through white-noise measurement error.

use serde::{Deserialize, Serialize};

use super::engine::PathModel;
use super::exposure::{paths_on, survivor_mc};
use super::{HazardLink, MCConfig, McEstimate};
use crate::error::{Error, Result};
use crate::revival::TemporalKernel;

/// `X(s) = eta(s) + eps(s)` with `eta ~ GP(0, K)` driving the hazard
/// `h(eta(t))` and `eps` white noise of variance `noise_var`. On an
/// observation grid the conditional mean of `eta` is `K (K + noise_var I)⁻¹ x`,
/// which is `K (I + K)⁻¹ x` at unit noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentJointModel {
    pub kernel: TemporalKernel,
    pub noise_var: f64,
    pub link: HazardLink,
}

impl LatentJointModel {
    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        self.link.validate()?;
        if !(self.noise_var >= 0.0 && self.noise_var.is_finite()) {
            return Err(Error::InvalidParameter("noise variance must be >= 0".into()));
        }
        Ok(())
    }
}

impl PathModel for LatentJointModel {
    fn prior_mean(&self, _: f64) -> f64 {
        0.0
    }

    fn cov(&self, a: f64, b: f64) -> f64 {
        self.kernel.eval((a - b).abs())
    }

    fn obs_noise(&self) -> f64 {
        self.noise_var
    }
}

/// Monte Carlo estimate of `pr(T > t | X(ts) = x)` under the latent model.
pub fn latent_conditional_survivor(
    ts: &[f64],
    x: &[f64],
    t: f64,
    model: &LatentJointModel,
    mc: &MCConfig,
) -> Result<McEstimate> {
    model.validate()?;
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::Domain(format!("time must be finite and >= 0, got {t}")));
    }
    if t == 0.0 {
        return Ok(McEstimate { estimate: 1.0, se: 0.0, paths: 0 });
    }
    let paths = paths_on(model, t, ts, x, mc)?;
    survivor_mc(&paths, &model.link, mc)
}
