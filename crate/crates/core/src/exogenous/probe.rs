//! Does the conditional survivor at `t` depend on exposures measured after `t`?

use serde::{Deserialize, Serialize};

use super::engine::{hazard_integral, mc_mean, uniform_grid, ConditionalPaths, PathModel};
use super::exposure::paths_on;
use super::{ExposureModel, HazardLink, LatentJointModel, MCConfig, McEstimate};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ProbeModel {
    Exposure(ExposureModel),
    Latent(LatentJointModel),
}

impl ProbeModel {
    fn parts(&self) -> Result<(&dyn PathModel, HazardLink)> {
        match self {
            ProbeModel::Exposure(m) => {
                m.validate()?;
                Ok((m, m.link))
            }
            ProbeModel::Latent(m) => {
                m.validate()?;
                Ok((m, m.link))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    /// `pr(T > t | x)`.
    pub survivor: McEstimate,
    /// `pr(T > t | x + delta e_j)` with the same random numbers.
    pub perturbed: McEstimate,
    /// Paired difference `survivor - perturbed` and its standard error.
    pub change: f64,
    pub change_se: f64,
    /// The change is within three standard errors of zero.
    pub observation_level_null: bool,
    /// Largest change of the pathwise survivor when the simulated hazard
    /// process is shifted by `delta` strictly after `t`.
    pub construction_level_change: f64,
}

/// Compares the survivor at `t` given `x` with the survivor given `x` after
/// adding `delta` to the future observation `x[j]` (`ts[j] > t`), under
/// common random numbers. Also perturbs simulated paths after `t` directly,
/// which can never change a survivor built from the path on `[0, t]`.
pub fn exogeneity_probe(
    model: &ProbeModel,
    ts: &[f64],
    x: &[f64],
    t: f64,
    j: usize,
    delta: f64,
    mc: &MCConfig,
) -> Result<ProbeReport> {
    let (pm, link) = model.parts()?;
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::Domain(format!("probe time must be positive, got {t}")));
    }
    if j >= ts.len() || !(ts[j] > t) {
        return Err(Error::Domain(format!("observation {j} is not after the probe time {t}")));
    }
    if !delta.is_finite() {
        return Err(Error::Domain("perturbation must be finite".into()));
    }
    let mut x2 = x.to_vec();
    x2[j] += delta;
    let base = paths_on(pm, t, ts, x, mc)?;
    let moved = base.with_mean(paths_on(pm, t, ts, &x2, mc)?.mean().to_vec());
    let last = base.dim() - 1;
    let surv = |p: &ConditionalPaths, z: &[f64]| {
        let mut v = vec![0.0; z.len()];
        p.path_into(z, &mut v);
        (-hazard_integral(p.grid(), &v, &link, last)).exp()
    };
    let survivor = mc_mean(base.dim(), mc, |z| surv(&base, z))?;
    let perturbed = mc_mean(base.dim(), mc, |z| surv(&moved, z))?;
    let diff = mc_mean(base.dim(), mc, |z| surv(&base, z) - surv(&moved, z))?;

    // construction level: paths extended past t, shifted only after t
    let m = mc.grid_intervals;
    let t_end = ts.iter().copied().fold(t, f64::max);
    let mut grid = uniform_grid(0.0, t, m);
    grid.extend(uniform_grid(t, t_end, (m / 4).max(10)).into_iter().skip(1));
    let ext = ConditionalPaths::new(pm, grid, ts, x)?;
    let cmc = MCConfig { paths: mc.paths.min(2000), ..*mc };
    let structural = mc_mean(ext.dim(), &cmc, |z| {
        let mut v = vec![0.0; z.len()];
        ext.path_into(z, &mut v);
        let before = (-hazard_integral(ext.grid(), &v, &link, m)).exp();
        for (s, val) in ext.grid().iter().zip(v.iter_mut()) {
            if *s > t {
                *val += delta;
            }
        }
        let after = (-hazard_integral(ext.grid(), &v, &link, m)).exp();
        (before - after).abs()
    })?;

    Ok(ProbeReport {
        survivor,
        perturbed,
        change: diff.estimate,
        change_se: diff.se,
        observation_level_null: diff.estimate.abs() <= 3.0 * diff.se,
        construction_level_change: structural.estimate,
    })
}
