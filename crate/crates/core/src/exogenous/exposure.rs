//! Gaussian exposure process with a hazard depending on the current exposure.

use serde::{Deserialize, Serialize};

use super::engine::{hazard_integral, mc_mean, uniform_grid, ConditionalPaths, PathModel};
use super::{HazardLink, MCConfig, McEstimate};
use crate::data::Terminal;
use crate::error::{Error, Result};
use crate::linalg::Factor;
use crate::revival::{RevivalModel, TemporalKernel};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// `mu0(s) = level + slope s`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExposureMean {
    pub level: f64,
    #[serde(default)]
    pub slope: f64,
}

/// `X ~ GP(mu0, K0)`, measured with optional noise of variance `nugget`,
/// acting on survival through the hazard `h(X(t))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExposureModel {
    pub mean: ExposureMean,
    pub kernel: TemporalKernel,
    #[serde(default)]
    pub nugget: f64,
    pub link: HazardLink,
}

impl ExposureModel {
    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        self.link.validate()?;
        if !(self.nugget >= 0.0 && self.nugget.is_finite()) {
            return Err(Error::InvalidParameter("nugget must be >= 0".into()));
        }
        if !(self.mean.level.is_finite() && self.mean.slope.is_finite()) {
            return Err(Error::InvalidParameter("exposure mean must be finite".into()));
        }
        Ok(())
    }
}

impl PathModel for ExposureModel {
    fn prior_mean(&self, s: f64) -> f64 {
        self.mean.level + self.mean.slope * s
    }

    fn cov(&self, a: f64, b: f64) -> f64 {
        self.kernel.eval((a - b).abs())
    }

    fn obs_noise(&self) -> f64 {
        self.nugget
    }
}

fn check_time(t: f64) -> Result<()> {
    if t >= 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("time must be finite and >= 0, got {t}")))
    }
}

pub(crate) fn paths_on(model: &dyn PathModel, t: f64, ts: &[f64], x: &[f64], mc: &MCConfig) -> Result<ConditionalPaths> {
    let grid = if t == 0.0 { vec![0.0] } else { uniform_grid(0.0, t, mc.grid_intervals) };
    ConditionalPaths::new(model, grid, ts, x)
}

/// Survivor `pr(T > t | X(ts) = x)`.
pub(crate) fn survivor_mc(paths: &ConditionalPaths, link: &HazardLink, mc: &MCConfig) -> Result<McEstimate> {
    let last = paths.dim() - 1;
    mc_mean(paths.dim(), mc, |z| {
        let mut p = vec![0.0; z.len()];
        paths.path_into(z, &mut p);
        (-hazard_integral(paths.grid(), &p, link, last)).exp()
    })
}

/// Monte Carlo estimate of the survival density at `t` given exposures `x`
/// observed at `ts`.
pub fn survival_density_given_exposure(
    ts: &[f64],
    x: &[f64],
    t: f64,
    model: &ExposureModel,
    mc: &MCConfig,
) -> Result<McEstimate> {
    model.validate()?;
    check_time(t)?;
    let paths = paths_on(model, t, ts, x, mc)?;
    let last = paths.dim() - 1;
    let link = model.link;
    mc_mean(paths.dim(), mc, |z| {
        let mut p = vec![0.0; z.len()];
        paths.path_into(z, &mut p);
        link.eval(p[last]) * (-hazard_integral(paths.grid(), &p, &link, last)).exp()
    })
}

/// Monte Carlo estimate of the survivor function at `t` given exposures `x`
/// observed at `ts`.
pub fn survivor_given_exposure(
    ts: &[f64],
    x: &[f64],
    t: f64,
    model: &ExposureModel,
    mc: &MCConfig,
) -> Result<McEstimate> {
    model.validate()?;
    check_time(t)?;
    if t == 0.0 {
        return Ok(McEstimate { estimate: 1.0, se: 0.0, paths: 0 });
    }
    let paths = paths_on(model, t, ts, x, mc)?;
    survivor_mc(&paths, &model.link, mc)
}

/// One patient's exposure and health record. Exposures may be measured after
/// death; health values only before.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExposureRecord {
    pub patient_id: String,
    pub exposure_times: Vec<f64>,
    pub exposure_values: Vec<f64>,
    #[serde(default)]
    pub health_times: Vec<f64>,
    #[serde(default)]
    pub health_values: Vec<f64>,
    #[serde(default)]
    pub arm: usize,
    pub terminal: Terminal,
}

/// Health given survival and exposure: the revival mean plus
/// `effect * X(s)` at each measurement time `s`, with the revival covariance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExposureHealth {
    pub psi: RevivalModel,
    pub effect: f64,
    /// For censored records with health data, the survival time is
    /// integrated up to this horizon and the remaining mass is lumped at it.
    /// Defaults to twice the censoring time.
    #[serde(default)]
    pub censored_horizon: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExposureLoglik {
    pub loglik: f64,
    /// `log p(x)`.
    pub exposure: f64,
    /// `log p(T | x)` and `log p(y | x, T)` combined.
    pub survival_and_health: f64,
    /// Standard error of the Monte Carlo part on the log scale.
    pub mc_se: f64,
    pub precision_warning: bool,
}

fn health_residual_base(record: &ExposureRecord, health: &ExposureHealth) -> Result<Vec<f64>> {
    // effect * X(s) at each health time, read from the exposure record
    record
        .health_times
        .iter()
        .map(|&s| {
            record
                .exposure_times
                .iter()
                .position(|&u| u == s)
                .map(|i| health.effect * record.exposure_values[i])
                .ok_or_else(|| Error::Data(format!("no exposure measured at health time {s}")))
        })
        .collect()
}

/// Log-likelihood of one exposure record: Gaussian exposure density, survival
/// given the exposure path (Monte Carlo), and the health density given
/// survival and the contemporaneous exposure.
pub fn exposure_record_loglik(
    record: &ExposureRecord,
    model: &ExposureModel,
    health: &ExposureHealth,
    mc: &MCConfig,
) -> Result<ExposureLoglik> {
    model.validate()?;
    health.psi.validate()?;
    let (ts, x) = (&record.exposure_times, &record.exposure_values);
    let (hs, hy) = (&record.health_times, &record.health_values);
    if ts.len() != x.len() || hs.len() != hy.len() {
        return Err(Error::Data("times and values differ in length".into()));
    }
    let wrap = |e: Error| e.in_record(&record.patient_id);

    // p(x)
    let exposure = if ts.is_empty() {
        0.0
    } else {
        let mut k = nalgebra::DMatrix::from_fn(ts.len(), ts.len(), |i, j| model.cov(ts[i], ts[j]));
        for i in 0..ts.len() {
            k[(i, i)] += model.nugget;
        }
        let f = Factor::new(k).map_err(wrap)?;
        let r: Vec<f64> = ts.iter().zip(x).map(|(&s, &v)| v - model.prior_mean(s)).collect();
        f.ln_normal(&r)
    };

    let shift = health_residual_base(record, health).map_err(wrap)?;
    let hfactor = if hs.is_empty() { None } else { Some(health.psi.covariance.factor(hs).map_err(wrap)?) };
    let mut buf = vec![0.0; hs.len()];
    let mut ln_health = |t: f64| -> f64 {
        let Some(f) = &hfactor else { return 0.0 };
        if t <= hs[hs.len() - 1] {
            return f64::NEG_INFINITY;
        }
        health.psi.mean.mean_into(hs, t, record.arm, &mut buf);
        for i in 0..buf.len() {
            buf[i] = hy[i] - buf[i] - shift[i];
        }
        f.ln_normal(&buf)
    };

    let (value, se) = match record.terminal {
        Terminal::Death(t) => {
            let d = survival_density_given_exposure(ts, x, t, model, mc).map_err(wrap)?;
            (d.estimate.ln() + ln_health(t), d.se / d.estimate)
        }
        Terminal::Censored(c) if hs.is_empty() => {
            let s = survivor_given_exposure(ts, x, c, model, mc).map_err(wrap)?;
            (s.estimate.ln(), s.se / s.estimate)
        }
        Terminal::Censored(c) => {
            let h_end = health.censored_horizon.unwrap_or(2.0 * c).max(c * (1.0 + 1e-9) + 1e-9);
            let m = mc.grid_intervals;
            let mut grid = uniform_grid(0.0, c, m);
            grid.extend(uniform_grid(c, h_end, m).into_iter().skip(1));
            let lh: Vec<f64> = grid[m..].iter().map(|&t| ln_health(t)).collect();
            let peak = lh.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if peak == f64::NEG_INFINITY {
                return Err(wrap(Error::UndefinedConditional("health values have zero density".into())));
            }
            let wh: Vec<f64> = lh.iter().map(|v| (v - peak).exp()).collect();
            let paths = ConditionalPaths::new(model, grid, ts, x).map_err(wrap)?;
            let link = model.link;
            let g = paths.grid();
            let est = mc_mean(paths.dim(), mc, |z| {
                let mut p = vec![0.0; z.len()];
                paths.path_into(z, &mut p);
                let mut cum = hazard_integral(g, &p, &link, m);
                let mut prev = link.eval(p[m]) * (-cum).exp() * wh[0];
                let mut acc = 0.0;
                for i in m + 1..g.len() {
                    let h = link.eval(p[i]);
                    cum += 0.5 * (g[i] - g[i - 1]) * (link.eval(p[i - 1]) + h);
                    let cur = h * (-cum).exp() * wh[i - m];
                    acc += 0.5 * (g[i] - g[i - 1]) * (prev + cur);
                    prev = cur;
                }
                acc + (-cum).exp() * wh[wh.len() - 1]
            })
            .map_err(wrap)?;
            (est.estimate.ln() + peak, est.se / est.estimate)
        }
        Terminal::Interval { .. } => {
            return Err(wrap(Error::Data("interval-censored exposure records are not supported".into())));
        }
    };
    if !value.is_finite() {
        return Err(wrap(Error::Domain("survival factor estimate is zero".into())));
    }
    let loglik = exposure + value;
    let precision_warning = se > mc.warn_rel_se * loglik.abs();
    if precision_warning {
        log::warn!(
            "record {}: Monte Carlo standard error {se:.3e} exceeds {} of |loglik|",
            record.patient_id,
            mc.warn_rel_se
        );
    }
    Ok(ExposureLoglik {
        loglik,
        exposure,
        survival_and_health: value,
        mc_se: se,
        precision_warning,
    })
}

/// `log N(x; mu0(ts), K0 + nugget I)` with a standalone evaluation, used to
/// cross-check the exposure factor.
pub fn exposure_log_density(ts: &[f64], x: &[f64], model: &ExposureModel) -> Result<f64> {
    let n = ts.len();
    let mut k = nalgebra::DMatrix::from_fn(n, n, |i, j| model.cov(ts[i], ts[j]));
    for i in 0..n {
        k[(i, i)] += model.nugget;
    }
    let det = k.determinant();
    let inv = k
        .try_inverse()
        .ok_or_else(|| Error::NotPositiveDefinite("exposure covariance is singular".into()))?;
    let r = nalgebra::DVector::from_iterator(n, ts.iter().zip(x).map(|(&s, &v)| v - model.prior_mean(s)));
    Ok(-0.5 * (n as f64 * LN_2PI + det.ln() + (r.transpose() * inv * &r)[(0, 0)]))
}
