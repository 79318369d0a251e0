//! Finite-dimensional densities of the Gaussian survival process.
//!
//! For sampling times `ts` and real values `y`, the joint density of values
//! and survival time is `q(y, t) = f(t) φ(y; γ(t), Σ)` for `t > max(ts)` and
//! zero otherwise. Marginal and interval masses integrate `q` over `t`; all
//! work is done on the log scale.

use serde::{Deserialize, Serialize};

use crate::data::StateValue;
use crate::error::{Error, Result};
use crate::linalg::Factor;
use crate::params::ModelParams;
use crate::quadrature::{integrate_adaptive, integrate_semi_infinite};

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const PROBES: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadratureConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_subdivisions: usize,
    /// Scale `c` of the tail map `t = lower + c u / (1 - u)`; defaults to the
    /// median of the survival law.
    pub tail_scale: Option<f64>,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig {
            rel_tol: 1e-8,
            abs_tol: 1e-12,
            max_subdivisions: 200,
            tail_scale: None,
        }
    }
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0) {
            return Err(Error::InvalidParameter("quadrature tolerances must be positive".into()));
        }
        if self.max_subdivisions < 1 {
            return Err(Error::InvalidParameter("max_subdivisions must be >= 1".into()));
        }
        if let Some(c) = self.tail_scale {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::InvalidParameter("tail_scale must be positive".into()));
            }
        }
        Ok(())
    }
}

/// A density or probability stored as its logarithm.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct LogDensity(pub f64);

impl LogDensity {
    pub fn ln(self) -> f64 {
        self.0
    }

    pub fn value(self) -> f64 {
        self.0.exp()
    }
}

fn check_inputs(ts: &[f64], y: &[f64]) -> Result<()> {
    if ts.len() != y.len() {
        return Err(Error::Domain(format!("{} sampling times but {} values", ts.len(), y.len())));
    }
    if ts.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Domain("sampling times must be strictly increasing".into()));
    }
    if ts.first().is_some_and(|&s| !(s >= 0.0)) || ts.iter().any(|s| !s.is_finite()) {
        return Err(Error::Domain("sampling times must be finite and >= 0".into()));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("health values must be finite".into()));
    }
    Ok(())
}

/// Joint density evaluator for one grid and one vector of values, with the
/// covariance factorised once.
pub struct GridDensity<'a> {
    ts: &'a [f64],
    y: &'a [f64],
    arm: usize,
    params: &'a ModelParams,
    factor: Option<Factor>,
    norm: f64,
    tmax: f64,
    buf: Vec<f64>,
}

impl<'a> GridDensity<'a> {
    pub fn new(ts: &'a [f64], y: &'a [f64], arm: usize, params: &'a ModelParams) -> Result<Self> {
        check_inputs(ts, y)?;
        params.validate()?;
        params.psi.mean.arm_offset(arm, 1.0)?;
        let factor = if ts.is_empty() {
            None
        } else {
            Some(params.psi.covariance.factor(ts)?)
        };
        let norm = factor
            .as_ref()
            .map_or(0.0, |f| -0.5 * (ts.len() as f64 * LN_2PI + f.log_det()));
        Ok(GridDensity {
            ts,
            y,
            arm,
            params,
            factor,
            norm,
            tmax: ts.last().copied().unwrap_or(0.0),
            buf: vec![0.0; ts.len()],
        })
    }

    pub fn max_time(&self) -> f64 {
        self.tmax
    }

    pub fn len(&self) -> usize {
        self.ts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ts.is_empty()
    }

    /// `ln φ(y; γ(t), Σ)`; zero for an empty grid. Requires `t > max(ts)`.
    pub fn ln_gaussian(&mut self, t: f64) -> f64 {
        let Some(f) = &self.factor else { return 0.0 };
        self.params.psi.mean.mean_into(self.ts, t, self.arm, &mut self.buf);
        for (b, y) in self.buf.iter_mut().zip(self.y) {
            *b = y - *b;
        }
        f.forward_solve(&mut self.buf);
        let q: f64 = self.buf.iter().map(|x| x * x).sum();
        self.norm - 0.5 * q
    }

    /// `ln q(y, t)`, `-inf` when `t <= max(ts)`.
    pub fn ln_q(&mut self, t: f64) -> f64 {
        if !self.ts.is_empty() && t <= self.tmax {
            return f64::NEG_INFINITY;
        }
        let lf = self.params.lambda.ln_density(t);
        if lf == f64::NEG_INFINITY {
            return lf;
        }
        lf + self.ln_gaussian(t)
    }

    /// `ln ∫ q(y, t) dt` over `(lower, upper)`, `upper = None` meaning infinity.
    pub fn ln_integral(&mut self, lower: f64, upper: Option<f64>, qc: &QuadratureConfig) -> Result<f64> {
        qc.validate()?;
        let lambda = self.params.lambda;
        if self.ts.is_empty() {
            let lo = lower.max(0.0);
            return Ok(match upper {
                None => lambda.ln_survivor(lo),
                Some(u) if u <= lo => f64::NEG_INFINITY,
                Some(u) => lambda.ln_interval(lo, u),
            });
        }
        let lo = lower.max(self.tmax);
        if let Some(u) = upper {
            if u <= lo {
                return Ok(f64::NEG_INFINITY);
            }
        }
        let scale = qc.tail_scale.unwrap_or_else(|| lambda.median()).max(1e-12);
        // maps the unit interval onto the integration range
        let to_t = |u: f64| match upper {
            None => lo + scale * u / (1.0 - u),
            Some(b) => lo + (b - lo) * u,
        };
        let mut shift = f64::NEG_INFINITY;
        for i in 0..PROBES {
            let u = (i as f64 + 0.5) / PROBES as f64;
            shift = shift.max(self.ln_q(to_t(u)));
        }
        if shift == f64::NEG_INFINITY {
            return Ok(f64::NEG_INFINITY);
        }
        for _ in 0..3 {
            let mut peak = f64::NEG_INFINITY;
            let mut integrand = |t: f64| {
                let l = self.ln_q(t);
                peak = peak.max(l);
                (l - shift).exp()
            };
            let res = match upper {
                None => integrate_semi_infinite(&mut integrand, lo, scale, qc.rel_tol, qc.abs_tol, qc.max_subdivisions),
                Some(b) => integrate_adaptive(&mut integrand, lo, b, qc.rel_tol, qc.abs_tol, qc.max_subdivisions),
            };
            if peak - shift > 30.0 {
                // probes missed a sharp peak; rescale and retry
                shift = peak;
                continue;
            }
            return match res {
                Ok(r) if r.value > 0.0 => Ok(shift + r.value.ln()),
                Ok(_) => Ok(f64::NEG_INFINITY),
                Err(Error::Quadrature { estimate, abs_error }) => Err(Error::Quadrature {
                    estimate: estimate * shift.exp(),
                    abs_error: abs_error * shift.exp(),
                }),
                Err(e) => Err(e),
            };
        }
        Err(Error::Quadrature {
            estimate: f64::NAN,
            abs_error: f64::INFINITY,
        })
    }
}

/// `q(y, t) = f(t) φ(y; γ(t), Σ)`, exactly zero for `t <= max(ts)`.
pub fn joint_density(ts: &[f64], y: &[f64], t: f64, arm: usize, params: &ModelParams) -> Result<LogDensity> {
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("survival time must be >= 0, got {t}")));
    }
    let mut g = GridDensity::new(ts, y, arm, params)?;
    Ok(LogDensity(g.ln_q(t)))
}

/// `p(y) = ∫ q(y, t) dt` over `t > max(ts)`.
pub fn marginal_density(
    ts: &[f64],
    y: &[f64],
    arm: usize,
    params: &ModelParams,
    qc: &QuadratureConfig,
) -> Result<LogDensity> {
    let mut g = GridDensity::new(ts, y, arm, params)?;
    let lo = g.max_time();
    Ok(LogDensity(g.ln_integral(lo, None, qc)?))
}

/// `∫ q(y, t) dt` over `t > max(lower, max(ts))`: the contribution of a record
/// censored at `lower`.
pub fn tail_mass(
    ts: &[f64],
    y: &[f64],
    lower: f64,
    arm: usize,
    params: &ModelParams,
    qc: &QuadratureConfig,
) -> Result<LogDensity> {
    let mut g = GridDensity::new(ts, y, arm, params)?;
    Ok(LogDensity(g.ln_integral(lower, None, qc)?))
}

/// `∫_a^b q(y, t) dt`; `b = +inf` is allowed.
pub fn interval_mass(
    ts: &[f64],
    y: &[f64],
    a: f64,
    b: f64,
    arm: usize,
    params: &ModelParams,
    qc: &QuadratureConfig,
) -> Result<LogDensity> {
    if !(b > a) {
        return Err(Error::Domain(format!("empty death interval ({a}, {b})")));
    }
    let mut g = GridDensity::new(ts, y, arm, params)?;
    let upper = if b.is_finite() { Some(b) } else { None };
    Ok(LogDensity(g.ln_integral(a, upper, qc)?))
}

/// Mass of a record whose trailing values are `Flat`: the real prefix's joint
/// density integrated over death times between the last real observation and
/// the first `Flat` one. Without real values the interval starts at 0.
pub fn interval_censored_mass(
    ts: &[f64],
    values: &[StateValue],
    arm: usize,
    params: &ModelParams,
    qc: &QuadratureConfig,
) -> Result<LogDensity> {
    if ts.len() != values.len() {
        return Err(Error::Domain("times and values differ in length".into()));
    }
    let k = values.iter().take_while(|v| !v.is_flat()).count();
    if k == values.len() {
        return Err(Error::Domain("record has no trailing FLAT values".into()));
    }
    if values[k..].iter().any(|v| !v.is_flat()) {
        return Err(Error::Domain("FLAT values must be trailing".into()));
    }
    let y: Vec<f64> = values[..k].iter().filter_map(StateValue::as_real).collect();
    let a = if k == 0 { 0.0 } else { ts[k - 1] };
    interval_mass(&ts[..k], &y, a, ts[k], arm, params, qc)
}

/// Law of the survival time given values at finitely many appointments:
/// density `q(y, t) / p(y)` on `(max(ts), ∞)`.
#[derive(Clone, Debug)]
pub struct ClinicalPredictive {
    ts: Vec<f64>,
    y: Vec<f64>,
    arm: usize,
    params: ModelParams,
    qc: QuadratureConfig,
    ln_p: f64,
}

impl ClinicalPredictive {
    pub fn support_start(&self) -> f64 {
        self.ts.last().copied().unwrap_or(0.0)
    }

    /// `ln p(y)`, the normalising constant.
    pub fn ln_normaliser(&self) -> f64 {
        self.ln_p
    }

    fn grid(&self) -> GridDensity<'_> {
        GridDensity::new(&self.ts, &self.y, self.arm, &self.params).expect("validated on construction")
    }

    pub fn ln_density(&self, t: f64) -> f64 {
        self.grid().ln_q(t) - self.ln_p
    }

    pub fn density(&self, t: f64) -> f64 {
        self.ln_density(t).exp()
    }

    /// Predictive probability that death occurs after `t`.
    pub fn survivor(&self, t: f64) -> Result<f64> {
        if t <= self.support_start() {
            return Ok(1.0);
        }
        let l = self.grid().ln_integral(t, None, &self.qc)?;
        Ok((l - self.ln_p).exp().min(1.0))
    }

    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Domain(format!("quantile level must lie in (0, 1), got {p}")));
        }
        let lo0 = self.support_start();
        let mut step = self.params.lambda.median().max(1e-6);
        let mut hi = lo0 + step;
        while 1.0 - self.survivor(hi)? < p {
            step *= 2.0;
            hi = lo0 + step;
            if !hi.is_finite() {
                return Err(Error::Domain("quantile beyond representable range".into()));
            }
        }
        let mut lo = lo0;
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if 1.0 - self.survivor(mid)? < p {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-10 * hi.abs().max(1.0) {
                break;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

pub fn clinical_predictive(
    ts: &[f64],
    y: &[f64],
    arm: usize,
    params: &ModelParams,
    qc: &QuadratureConfig,
) -> Result<ClinicalPredictive> {
    let ln_p = marginal_density(ts, y, arm, params, qc)?.ln();
    if ln_p == f64::NEG_INFINITY {
        return Err(Error::UndefinedConditional(
            "the observed values have zero marginal density".into(),
        ));
    }
    Ok(ClinicalPredictive {
        ts: ts.to_vec(),
        y: y.to_vec(),
        arm,
        params: params.clone(),
        qc: *qc,
        ln_p,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::revival::{CovarianceModel, MeanCurve, MeanModel, RevivalModel, TemporalKernel};
    use crate::survival::SurvivalFamily;
    use approx::assert_relative_eq;

    fn unit_model() -> ModelParams {
        // gamma = 0, Σ = 1 on a single point, exponential(1) survival
        ModelParams {
            lambda: SurvivalFamily::Exponential { rate: 1.0 },
            psi: RevivalModel {
                mean: MeanModel {
                    alpha: vec![0.0],
                    curve: MeanCurve::log_linear(0.0, 0.0),
                    beta: vec![0.0],
                },
                covariance: CovarianceModel {
                    sigma_b2: 0.5,
                    kernel: TemporalKernel::Exponential { variance: 0.25, range: 1.0 },
                    sigma_e2: 0.25,
                    extra_kernels: vec![],
                },
            },
        }
    }

    #[test]
    fn joint_density_hand_value() {
        let p = unit_model();
        let d = joint_density(&[0.5], &[0.0], 1.0, 0, &p).unwrap().value();
        let expect = (-1f64).exp() / (2.0 * std::f64::consts::PI).sqrt();
        assert_relative_eq!(d, expect, max_relative = 1e-14);
        assert_relative_eq!(d, 0.146762, epsilon = 1e-6);
    }

    #[test]
    fn joint_density_zero_before_last_sample() {
        let p = unit_model();
        assert_eq!(joint_density(&[0.5, 1.0], &[0.0, 0.0], 1.0, 0, &p).unwrap().value(), 0.0);
        assert_eq!(joint_density(&[0.5, 1.0], &[0.0, 0.0], 0.7, 0, &p).unwrap().value(), 0.0);
    }

    #[test]
    fn empty_grid_reduces_to_survival() {
        let p = ModelParams::reference();
        let qc = QuadratureConfig::default();
        for t in [0.5, 3.0, 11.0] {
            let d = joint_density(&[], &[], t, 1, &p).unwrap().value();
            assert_relative_eq!(d, p.lambda.density(t).unwrap(), max_relative = 1e-14);
        }
        assert_eq!(marginal_density(&[], &[], 0, &p, &qc).unwrap().value(), 1.0);
        let m = interval_mass(&[], &[], 2.0, 5.0, 0, &p, &qc).unwrap().value();
        let expect = p.lambda.survivor(2.0).unwrap() - p.lambda.survivor(5.0).unwrap();
        assert_relative_eq!(m, expect, max_relative = 1e-12);
    }

    #[test]
    fn interval_flat_record() {
        let p = ModelParams::reference();
        let qc = QuadratureConfig::default();
        let ts = [0.0, 1.0, 2.0, 3.0];
        let vals = [StateValue::Real(0.3), StateValue::Real(1.1), StateValue::Flat, StateValue::Flat];
        let m = interval_censored_mass(&ts, &vals, 1, &p, &qc).unwrap();
        let direct = interval_mass(&ts[..2], &[0.3, 1.1], 1.0, 2.0, 1, &p, &qc).unwrap();
        assert_eq!(m, direct);
        let no_real = [StateValue::Flat, StateValue::Flat];
        let m = interval_censored_mass(&[1.0, 2.0], &no_real, 0, &p, &qc).unwrap().value();
        assert_relative_eq!(m, 1.0 - p.lambda.survivor(1.0).unwrap(), max_relative = 1e-12);
        assert!(interval_censored_mass(&ts[..2], &vals[..2], 0, &p, &qc).is_err());
    }

    #[test]
    fn predictive_without_history_is_prior() {
        let p = ModelParams::reference();
        let qc = QuadratureConfig::default();
        let cp = clinical_predictive(&[], &[], 0, &p, &qc).unwrap();
        for t in [0.5, 4.0, 15.0] {
            assert_relative_eq!(cp.density(t), p.lambda.density(t).unwrap(), max_relative = 1e-12);
            assert_relative_eq!(cp.survivor(t).unwrap(), p.lambda.survivor(t).unwrap(), max_relative = 1e-10);
        }
        assert_relative_eq!(cp.quantile(0.5).unwrap(), p.lambda.median(), max_relative = 1e-8);
    }

    #[test]
    fn input_errors() {
        let p = unit_model();
        assert!(matches!(joint_density(&[0.5], &[], 1.0, 0, &p), Err(Error::Domain(_))));
        assert!(matches!(joint_density(&[1.0, 0.5], &[0.0, 0.0], 2.0, 0, &p), Err(Error::Domain(_))));
        assert!(matches!(joint_density(&[0.5], &[0.0], 1.0, 3, &p), Err(Error::Domain(_))));
        let bad = QuadratureConfig { rel_tol: 0.0, ..Default::default() };
        assert!(marginal_density(&[0.5], &[0.0], 0, &p, &bad).is_err());
    }
}
