//! Conditional Gaussian law of the health process given the survival time.
//!
//! Given `T = t`, the health value at `s < t` has mean
//! `alpha(t) + m0(t - s) + beta_arm` and the covariance is a random intercept
//! plus stationary temporal kernels plus white noise. At recruitment (`s = 0`)
//! every patient is at the null arm.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Factor;

/// Basis for the characteristic mean curve `m0(z)` in revival time `z = t - s`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CurveBasis {
    /// `m0(z) = c1 ln(1 + z) + c2 z`.
    LogLinear,
    /// Natural cubic spline with the given knots (intercept included).
    NaturalSpline { knots: Vec<f64> },
}

impl CurveBasis {
    pub fn len(&self) -> usize {
        match self {
            CurveBasis::LogLinear => 2,
            CurveBasis::NaturalSpline { knots } => knots.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn eval_into(&self, z: f64, out: &mut [f64]) {
        match self {
            CurveBasis::LogLinear => {
                out[0] = z.ln_1p();
                out[1] = z;
            }
            CurveBasis::NaturalSpline { knots } => {
                let k = knots.len();
                out[0] = 1.0;
                out[1] = z;
                let last = knots[k - 1];
                let cube = |x: f64| if x > 0.0 { x * x * x } else { 0.0 };
                let d = |j: usize| (cube(z - knots[j]) - cube(z - last)) / (last - knots[j]);
                let d_last = d(k - 2);
                for j in 0..k - 2 {
                    out[j + 2] = d(j) - d_last;
                }
            }
        }
    }

    fn validate(&self) -> Result<()> {
        if let CurveBasis::NaturalSpline { knots } = self {
            if knots.len() < 2 {
                return Err(Error::InvalidParameter("natural spline needs at least two knots".into()));
            }
            if knots.windows(2).any(|w| !(w[1] > w[0])) || knots.iter().any(|k| !k.is_finite()) {
                return Err(Error::InvalidParameter("spline knots must be finite and increasing".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanCurve {
    pub basis: CurveBasis,
    pub coefs: Vec<f64>,
}

impl MeanCurve {
    pub fn log_linear(c1: f64, c2: f64) -> Self {
        MeanCurve {
            basis: CurveBasis::LogLinear,
            coefs: vec![c1, c2],
        }
    }

    pub fn eval(&self, z: f64) -> f64 {
        match self.basis {
            CurveBasis::LogLinear => self.coefs[0] * z.ln_1p() + self.coefs[1] * z,
            _ => {
                let mut b = vec![0.0; self.basis.len()];
                self.basis.eval_into(z, &mut b);
                b.iter().zip(&self.coefs).map(|(x, c)| x * c).sum()
            }
        }
    }
}

/// `mu_t(s) = alpha(t) + m0(t - s) + beta_arm`, with `alpha(t) = sum_k alpha[k] t^(k+1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanModel {
    pub alpha: Vec<f64>,
    pub curve: MeanCurve,
    /// Per-arm offsets; `beta[0]` is the null arm and must be zero.
    #[serde(default)]
    pub beta: Vec<f64>,
}

impl MeanModel {
    pub fn validate(&self) -> Result<()> {
        self.curve.basis.validate()?;
        if self.curve.coefs.len() != self.curve.basis.len() {
            return Err(Error::InvalidParameter(format!(
                "mean curve needs {} coefficients, got {}",
                self.curve.basis.len(),
                self.curve.coefs.len()
            )));
        }
        if let Some(&b0) = self.beta.first() {
            if b0 != 0.0 {
                return Err(Error::InvalidParameter("offset of the null arm must be 0".into()));
            }
        }
        let finite = self
            .alpha
            .iter()
            .chain(&self.curve.coefs)
            .chain(&self.beta)
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidParameter("mean coefficients must be finite".into()));
        }
        Ok(())
    }

    pub fn n_arms(&self) -> usize {
        self.beta.len().max(1)
    }

    pub fn alpha_at(&self, t: f64) -> f64 {
        let mut acc = 0.0;
        let mut p = t;
        for a in &self.alpha {
            acc += a * p;
            p *= t;
        }
        acc
    }

    /// Offset applied at time `s`; recruitment values sit at the null level.
    pub fn arm_offset(&self, arm: usize, s: f64) -> Result<f64> {
        if arm >= self.n_arms() {
            return Err(Error::Domain(format!(
                "arm {arm} is not modelled ({} arms)",
                self.n_arms()
            )));
        }
        if s <= 0.0 || arm == 0 {
            Ok(0.0)
        } else {
            Ok(self.beta[arm])
        }
    }

    /// Fills `out[i]` with the conditional mean at `ts[i]`; no domain checks.
    pub fn mean_into(&self, ts: &[f64], t: f64, arm: usize, out: &mut [f64]) {
        let base = self.alpha_at(t);
        let beta = if arm == 0 { 0.0 } else { self.beta[arm] };
        match self.curve.basis {
            CurveBasis::LogLinear => {
                let (c1, c2) = (self.curve.coefs[0], self.curve.coefs[1]);
                for (o, &s) in out.iter_mut().zip(ts) {
                    let z = t - s;
                    let b = if s > 0.0 { beta } else { 0.0 };
                    *o = base + c1 * z.ln_1p() + c2 * z + b;
                }
            }
            _ => {
                for (o, &s) in out.iter_mut().zip(ts) {
                    let b = if s > 0.0 { beta } else { 0.0 };
                    *o = base + self.curve.eval(t - s) + b;
                }
            }
        }
    }

    /// Number of linear mean coefficients: alpha, curve, non-null arm offsets.
    pub fn n_coefficients(&self) -> usize {
        self.alpha.len() + self.curve.coefs.len() + self.n_arms() - 1
    }

    pub fn coefficients(&self) -> Vec<f64> {
        let mut v = self.alpha.clone();
        v.extend_from_slice(&self.curve.coefs);
        if self.beta.len() > 1 {
            v.extend_from_slice(&self.beta[1..]);
        }
        v
    }

    pub fn coefficient_names(&self) -> Vec<String> {
        let mut v: Vec<String> = (1..=self.alpha.len()).map(|k| format!("alpha{k}")).collect();
        v.extend((1..=self.curve.coefs.len()).map(|k| format!("m{k}")));
        v.extend((1..self.n_arms()).map(|a| format!("beta{a}")));
        v
    }

    pub fn with_coefficients(&self, c: &[f64]) -> Self {
        let mut out = self.clone();
        let na = self.alpha.len();
        let nc = self.curve.coefs.len();
        out.alpha.copy_from_slice(&c[..na]);
        out.curve.coefs.copy_from_slice(&c[na..na + nc]);
        if self.beta.len() > 1 {
            out.beta[1..].copy_from_slice(&c[na + nc..]);
        }
        out
    }

    /// Row of the linear design: the mean equals `row · coefficients`.
    pub fn design_row(&self, s: f64, t: f64, arm: usize, out: &mut [f64]) {
        let na = self.alpha.len();
        let nc = self.curve.coefs.len();
        let mut p = t;
        for o in out.iter_mut().take(na) {
            *o = p;
            p *= t;
        }
        self.curve.basis.eval_into(t - s, &mut out[na..na + nc]);
        for (a, o) in out[na + nc..].iter_mut().enumerate() {
            *o = if arm == a + 1 && s > 0.0 { 1.0 } else { 0.0 };
        }
    }
}

/// Stationary temporal kernel, a function of `|s - s'|`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TemporalKernel {
    /// Ornstein-Uhlenbeck: `variance * exp(-lag / range)`.
    Exponential { variance: f64, range: f64 },
    /// `variance * (1 + √3 lag / range) exp(-√3 lag / range)`.
    Matern32 { variance: f64, range: f64 },
}

impl TemporalKernel {
    #[inline]
    pub fn eval(&self, lag: f64) -> f64 {
        let lag = lag.abs();
        match *self {
            TemporalKernel::Exponential { variance, range } => variance * (-lag / range).exp(),
            TemporalKernel::Matern32 { variance, range } => {
                let r = 3f64.sqrt() * lag / range;
                variance * (1.0 + r) * (-r).exp()
            }
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            TemporalKernel::Exponential { variance, .. } | TemporalKernel::Matern32 { variance, .. } => variance,
        }
    }

    pub fn range(&self) -> f64 {
        match *self {
            TemporalKernel::Exponential { range, .. } | TemporalKernel::Matern32 { range, .. } => range,
        }
    }

    pub fn with(&self, variance: f64, range: f64) -> Self {
        match self {
            TemporalKernel::Exponential { .. } => TemporalKernel::Exponential { variance, range },
            TemporalKernel::Matern32 { .. } => TemporalKernel::Matern32 { variance, range },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (v, r) = (self.variance(), self.range());
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::InvalidParameter(format!("kernel variance must be >= 0, got {v}")));
        }
        if !(r.is_finite() && r > 0.0) {
            return Err(Error::InvalidParameter(format!("kernel range must be > 0, got {r}")));
        }
        Ok(())
    }

    pub fn matrix(&self, a: &[f64], b: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(a.len(), b.len(), |i, j| self.eval(a[i] - b[j]))
    }
}

/// `K(s, s') = sigma_b2 + k(s, s') + sum extra(s, s') + sigma_e2 [s = s']`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovarianceModel {
    pub sigma_b2: f64,
    pub kernel: TemporalKernel,
    pub sigma_e2: f64,
    /// Additional stationary kernels summed into the covariance.
    #[serde(default)]
    pub extra_kernels: Vec<TemporalKernel>,
}

impl CovarianceModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_b2.is_finite() && self.sigma_b2 >= 0.0) {
            return Err(Error::InvalidParameter(format!("sigma_b2 must be >= 0, got {}", self.sigma_b2)));
        }
        if !(self.sigma_e2.is_finite() && self.sigma_e2 > 0.0) {
            return Err(Error::InvalidParameter(format!("sigma_e2 must be > 0, got {}", self.sigma_e2)));
        }
        self.kernel.validate()?;
        for k in &self.extra_kernels {
            k.validate()?;
        }
        Ok(())
    }

    #[inline]
    pub fn cov(&self, s: f64, s2: f64) -> f64 {
        let lag = s - s2;
        let mut v = self.sigma_b2 + self.kernel.eval(lag);
        for k in &self.extra_kernels {
            v += k.eval(lag);
        }
        if s == s2 {
            v += self.sigma_e2;
        }
        v
    }

    pub fn matrix(&self, ts: &[f64]) -> DMatrix<f64> {
        let n = ts.len();
        let mut m = DMatrix::zeros(n, n);
        for j in 0..n {
            for i in j..n {
                let v = self.cov(ts[i], ts[j]);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }

    pub fn factor(&self, ts: &[f64]) -> Result<Factor> {
        Factor::new(self.matrix(ts))
    }
}

/// Conditional law of health given survival: the `psi` parameter block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RevivalModel {
    pub mean: MeanModel,
    pub covariance: CovarianceModel,
}

impl RevivalModel {
    pub fn validate(&self) -> Result<()> {
        self.mean.validate()?;
        self.covariance.validate()
    }
}

fn check_grid(ts: &[f64], t: f64) -> Result<()> {
    if ts.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Domain("sampling grid must be strictly increasing".into()));
    }
    if let Some(&last) = ts.last() {
        if !(last < t) {
            return Err(Error::Domain(format!(
                "conditional mean is not defined at s = {last} >= t = {t}"
            )));
        }
    }
    if ts.first().is_some_and(|&s| s < 0.0) {
        return Err(Error::Domain("sampling times must be >= 0".into()));
    }
    Ok(())
}

/// `alpha(t) + m0(t - s) + beta_arm` for `0 <= s < t`.
pub fn conditional_mean(s: f64, t: f64, arm: usize, mm: &MeanModel) -> Result<f64> {
    mm.validate()?;
    if !(s >= 0.0) {
        return Err(Error::Domain(format!("sampling time must be >= 0, got {s}")));
    }
    if !(s < t) {
        return Err(Error::Domain(format!("conditional mean is not defined for s = {s} >= t = {t}")));
    }
    Ok(mm.alpha_at(t) + mm.curve.eval(t - s) + mm.arm_offset(arm, s)?)
}

/// Mean vector and covariance matrix of the health values on `ts` given `T = t`.
pub fn conditional_moments(
    ts: &[f64],
    t: f64,
    arm: usize,
    mm: &MeanModel,
    cm: &CovarianceModel,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    mm.validate()?;
    cm.validate()?;
    check_grid(ts, t)?;
    mm.arm_offset(arm, 1.0)?;
    let mut gamma = vec![0.0; ts.len()];
    mm.mean_into(ts, t, arm, &mut gamma);
    let sigma = cm.matrix(ts);
    // surfaces numerically indefinite parameter settings
    Factor::new(sigma.clone())?;
    Ok((DVector::from_vec(gamma), sigma))
}

/// One draw of the health values on `ts` given `T = t`.
pub fn sample_conditional<R: Rng + ?Sized>(
    ts: &[f64],
    t: f64,
    arm: usize,
    mm: &MeanModel,
    cm: &CovarianceModel,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let (gamma, sigma) = conditional_moments(ts, t, arm, mm, cm)?;
    let factor = Factor::new(sigma)?;
    let z: Vec<f64> = (0..ts.len()).map(|_| rng.sample(StandardNormal)).collect();
    let dev = factor.mul_lower(&z);
    Ok(gamma.iter().zip(dev).map(|(g, d)| g + d).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mean(alpha: f64, c1: f64, c2: f64, beta: Vec<f64>) -> MeanModel {
        MeanModel {
            alpha: vec![alpha],
            curve: MeanCurve::log_linear(c1, c2),
            beta,
        }
    }

    fn ou_cov() -> CovarianceModel {
        CovarianceModel {
            sigma_b2: 1.0,
            kernel: TemporalKernel::Exponential { variance: 2.0, range: 1.0 },
            sigma_e2: 0.25,
            extra_kernels: vec![],
        }
    }

    #[test]
    fn mean_substitution() {
        let mm = mean(0.0, 0.0, 1.0, vec![0.0]);
        assert_eq!(conditional_mean(3.0, 5.0, 0, &mm).unwrap(), 2.0);
        let mm = mean(0.1, 2.0, 0.0, vec![0.0]);
        let v = conditional_mean(4.0, 5.0, 0, &mm).unwrap();
        assert_relative_eq!(v, 0.5 + 2.0 * 2f64.ln(), epsilon = 1e-14);
        assert_relative_eq!(v, 1.8863, epsilon = 1e-4);
    }

    #[test]
    fn undefined_at_or_after_death() {
        let mm = mean(0.0, 0.0, 1.0, vec![0.0]);
        assert!(matches!(conditional_mean(3.0, 3.0, 0, &mm), Err(Error::Domain(_))));
        assert!(matches!(conditional_mean(4.0, 3.0, 0, &mm), Err(Error::Domain(_))));
        assert!(matches!(
            conditional_moments(&[1.0, 3.0], 3.0, 0, &mm, &ou_cov()),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn parallel_curves() {
        let mm = mean(0.3, 1.5, -0.2, vec![0.0, 0.0, 1.0]);
        for &t in &[1.0, 4.0, 9.0] {
            for &z in &[0.1, 0.5, 0.99 * t] {
                let a = conditional_mean(t - z, t, 2, &mm).unwrap();
                let b = conditional_mean(t - z, t, 1, &mm).unwrap();
                assert_relative_eq!(a - b, 1.0, epsilon = 1e-12);
            }
        }
        // recruitment values sit at the null level
        let a = conditional_mean(0.0, 5.0, 2, &mm).unwrap();
        let b = conditional_mean(0.0, 5.0, 1, &mm).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn additive_in_survival_time() {
        let mm = MeanModel {
            alpha: vec![0.1, -0.01],
            curve: MeanCurve::log_linear(2.0, 0.3),
            beta: vec![0.0],
        };
        let (t1, t2) = (6.0, 3.5);
        let diffs: Vec<f64> = [0.2, 1.0, 3.0]
            .iter()
            .map(|&z| conditional_mean(t1 - z, t1, 0, &mm).unwrap() - conditional_mean(t2 - z, t2, 0, &mm).unwrap())
            .collect();
        for d in &diffs {
            assert_relative_eq!(*d, mm.alpha_at(t1) - mm.alpha_at(t2), epsilon = 1e-12);
        }
    }

    #[test]
    fn covariance_examples() {
        let mm = mean(0.0, 0.0, 0.0, vec![0.0]);
        let (_, s) = conditional_moments(&[0.7], 2.0, 0, &mm, &ou_cov()).unwrap();
        assert_relative_eq!(s[(0, 0)], 3.25, epsilon = 1e-15);
        let (_, s) = conditional_moments(&[0.0, 1.0], 2.0, 0, &mm, &ou_cov()).unwrap();
        let off = 1.0 + 2.0 * (-1f64).exp();
        assert_relative_eq!(s[(0, 0)], 3.25);
        assert_relative_eq!(s[(1, 1)], 3.25);
        assert_relative_eq!(s[(0, 1)], off, epsilon = 1e-15);
        assert_relative_eq!(s[(1, 0)], off, epsilon = 1e-15);

        let cs = CovarianceModel {
            kernel: TemporalKernel::Exponential { variance: 0.0, range: 1.0 },
            ..ou_cov()
        };
        let (_, s) = conditional_moments(&[0.0, 0.5, 1.5], 2.0, 0, &mm, &cs).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expect = 1.0 + if i == j { 0.25 } else { 0.0 };
                assert_relative_eq!(s[(i, j)], expect);
            }
        }
    }

    #[test]
    fn spline_basis_is_linear_beyond_boundary_knots() {
        let basis = CurveBasis::NaturalSpline { knots: vec![0.0, 1.0, 3.0, 6.0] };
        let curve = MeanCurve { basis, coefs: vec![0.5, -0.2, 1.3, 0.7] };
        // second difference vanishes past the last knot
        let h = 0.5;
        let d2 = curve.eval(8.0 + h) - 2.0 * curve.eval(8.0) + curve.eval(8.0 - h);
        assert!(d2.abs() < 1e-9, "{d2}");
        let d2 = curve.eval(-2.0 + h) - 2.0 * curve.eval(-2.0) + curve.eval(-2.0 - h);
        assert!(d2.abs() < 1e-12);
    }

    #[test]
    fn design_row_reproduces_mean() {
        let mm = MeanModel {
            alpha: vec![0.1, 0.02],
            curve: MeanCurve {
                basis: CurveBasis::NaturalSpline { knots: vec![0.0, 2.0, 5.0] },
                coefs: vec![1.0, -0.5, 0.25],
            },
            beta: vec![0.0, 0.7, -1.2],
        };
        let c = mm.coefficients();
        assert_eq!(c.len(), mm.n_coefficients());
        let mut row = vec![0.0; c.len()];
        for &(s, t, arm) in &[(0.0, 3.0, 2), (1.0, 3.0, 2), (2.5, 7.0, 1), (0.5, 1.0, 0)] {
            mm.design_row(s, t, arm, &mut row);
            let lin: f64 = row.iter().zip(&c).map(|(a, b)| a * b).sum();
            assert_relative_eq!(lin, conditional_mean(s, t, arm, &mm).unwrap(), epsilon = 1e-12);
        }
        assert_eq!(mm.with_coefficients(&c), mm);
    }

    #[test]
    fn sampling_moments() {
        let mm = mean(0.1, 2.0, 0.0, vec![0.0, 1.0]);
        let cm = ou_cov();
        let ts = [0.0, 0.5, 2.0];
        let (g, s) = conditional_moments(&ts, 5.0, 1, &mm, &cm).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let mut sum = [0.0; 3];
        let mut cross = [[0.0; 3]; 3];
        let draws: Vec<Vec<f64>> = (0..n)
            .map(|_| sample_conditional(&ts, 5.0, 1, &mm, &cm, &mut rng).unwrap())
            .collect();
        for d in &draws {
            for i in 0..3 {
                sum[i] += d[i];
            }
        }
        let m: Vec<f64> = sum.iter().map(|x| x / n as f64).collect();
        for d in &draws {
            for i in 0..3 {
                for j in 0..3 {
                    cross[i][j] += (d[i] - m[i]) * (d[j] - m[j]);
                }
            }
        }
        for i in 0..3 {
            let se = (s[(i, i)] / n as f64).sqrt();
            assert!((m[i] - g[i]).abs() < 3.0 * se, "mean {i}");
            for j in 0..3 {
                let c = cross[i][j] / (n - 1) as f64;
                let se = ((s[(i, i)] * s[(j, j)] + s[(i, j)].powi(2)) / n as f64).sqrt();
                assert!((c - s[(i, j)]).abs() < 3.0 * se, "cov {i}{j}: {c} vs {}", s[(i, j)]);
            }
        }
    }

    #[test]
    fn degenerate_sampling_returns_mean() {
        let mm = mean(0.1, 2.0, 0.0, vec![0.0]);
        let cm = CovarianceModel {
            sigma_b2: 0.0,
            kernel: TemporalKernel::Exponential { variance: 0.0, range: 1.0 },
            sigma_e2: 1e-12,
            extra_kernels: vec![],
        };
        let ts = [0.0, 1.0, 2.0];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y = sample_conditional(&ts, 4.0, 0, &mm, &cm, &mut rng).unwrap();
        let (g, _) = conditional_moments(&ts, 4.0, 0, &mm, &cm).unwrap();
        for i in 0..3 {
            assert!((y[i] - g[i]).abs() < 1e-5);
        }
    }
}
