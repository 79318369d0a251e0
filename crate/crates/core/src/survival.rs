//! Parametric survival-time families.

use rand::Rng;
use rand_distr::{Distribution, Gamma as GammaDist};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma_li, gamma_lr, gamma_ui, gamma_ur, ln_gamma};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FamilyKind {
    Exponential,
    Weibull,
    Gamma,
}

impl FamilyKind {
    pub fn n_params(self) -> usize {
        match self {
            FamilyKind::Exponential => 1,
            FamilyKind::Weibull | FamilyKind::Gamma => 2,
        }
    }

    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            FamilyKind::Exponential => &["rate"],
            FamilyKind::Weibull => &["shape", "scale"],
            FamilyKind::Gamma => &["shape", "rate"],
        }
    }
}

/// Marginal law of the survival time `T`. Every parameter is strictly positive.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FamilySpec", into = "FamilySpec")]
pub enum SurvivalFamily {
    Exponential { rate: f64 },
    Weibull { shape: f64, scale: f64 },
    /// Shape and rate parameterisation.
    Gamma { shape: f64, rate: f64 },
}

/// JSON form: `{"family": "weibull", "params": [shape, scale]}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FamilySpec {
    pub family: FamilyKind,
    pub params: Vec<f64>,
}

impl TryFrom<FamilySpec> for SurvivalFamily {
    type Error = Error;

    fn try_from(spec: FamilySpec) -> Result<Self> {
        SurvivalFamily::from_params(spec.family, &spec.params)
    }
}

impl From<SurvivalFamily> for FamilySpec {
    fn from(f: SurvivalFamily) -> Self {
        FamilySpec {
            family: f.kind(),
            params: f.params(),
        }
    }
}

impl Default for SurvivalFamily {
    fn default() -> Self {
        SurvivalFamily::Weibull {
            shape: 1.5,
            scale: 10.0,
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be finite and positive, got {v}")))
    }
}

impl SurvivalFamily {
    pub fn exponential(rate: f64) -> Result<Self> {
        Self::from_params(FamilyKind::Exponential, &[rate])
    }

    pub fn weibull(shape: f64, scale: f64) -> Result<Self> {
        Self::from_params(FamilyKind::Weibull, &[shape, scale])
    }

    pub fn gamma(shape: f64, rate: f64) -> Result<Self> {
        Self::from_params(FamilyKind::Gamma, &[shape, rate])
    }

    pub fn from_params(kind: FamilyKind, params: &[f64]) -> Result<Self> {
        if params.len() != kind.n_params() {
            return Err(Error::InvalidParameter(format!(
                "{kind:?} takes {} parameters, got {}",
                kind.n_params(),
                params.len()
            )));
        }
        let fam = match kind {
            FamilyKind::Exponential => SurvivalFamily::Exponential { rate: params[0] },
            FamilyKind::Weibull => SurvivalFamily::Weibull {
                shape: params[0],
                scale: params[1],
            },
            FamilyKind::Gamma => SurvivalFamily::Gamma {
                shape: params[0],
                rate: params[1],
            },
        };
        fam.validate()?;
        Ok(fam)
    }

    pub fn kind(&self) -> FamilyKind {
        match self {
            SurvivalFamily::Exponential { .. } => FamilyKind::Exponential,
            SurvivalFamily::Weibull { .. } => FamilyKind::Weibull,
            SurvivalFamily::Gamma { .. } => FamilyKind::Gamma,
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match *self {
            SurvivalFamily::Exponential { rate } => vec![rate],
            SurvivalFamily::Weibull { shape, scale } => vec![shape, scale],
            SurvivalFamily::Gamma { shape, rate } => vec![shape, rate],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let names = self.kind().param_names();
        for (name, v) in names.iter().zip(self.params()) {
            positive(name, v)?;
        }
        Ok(())
    }

    fn check(&self, t: f64) -> Result<()> {
        self.validate()?;
        if t.is_nan() || t < 0.0 {
            return Err(Error::Domain(format!("survival time must be >= 0, got {t}")));
        }
        Ok(())
    }

    /// Log density without argument checks; `-inf` outside the support.
    pub fn ln_density(&self, t: f64) -> f64 {
        if t < 0.0 {
            return f64::NEG_INFINITY;
        }
        match *self {
            SurvivalFamily::Exponential { rate } => rate.ln() - rate * t,
            SurvivalFamily::Weibull { shape, scale } => {
                let z = t / scale;
                if z == 0.0 {
                    return match shape {
                        k if k < 1.0 => f64::INFINITY,
                        k if k == 1.0 => -scale.ln(),
                        _ => f64::NEG_INFINITY,
                    };
                }
                shape.ln() - scale.ln() + (shape - 1.0) * z.ln() - z.powf(shape)
            }
            SurvivalFamily::Gamma { shape, rate } => {
                if t == 0.0 {
                    return match shape {
                        k if k < 1.0 => f64::INFINITY,
                        k if k == 1.0 => rate.ln(),
                        _ => f64::NEG_INFINITY,
                    };
                }
                shape * rate.ln() + (shape - 1.0) * t.ln() - rate * t - ln_gamma(shape)
            }
        }
    }

    /// Log survivor function without argument checks.
    pub fn ln_survivor(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        match *self {
            SurvivalFamily::Exponential { rate } => -rate * t,
            SurvivalFamily::Weibull { shape, scale } => -(t / scale).powf(shape),
            SurvivalFamily::Gamma { shape, rate } => {
                let x = rate * t;
                if x < shape {
                    (-gamma_lr(shape, x)).ln_1p()
                } else {
                    // log of the unregularised upper integral keeps the far tail finite
                    let ui = gamma_ui(shape, x);
                    if ui > 0.0 {
                        ui.ln() - ln_gamma(shape)
                    } else {
                        gamma_ur(shape, x).ln()
                    }
                }
            }
        }
    }

    pub fn density(&self, t: f64) -> Result<f64> {
        self.check(t)?;
        Ok(self.ln_density(t).exp())
    }

    pub fn survivor(&self, t: f64) -> Result<f64> {
        self.check(t)?;
        Ok(self.ln_survivor(t).exp())
    }

    pub fn cdf(&self, t: f64) -> f64 {
        match *self {
            SurvivalFamily::Gamma { shape, rate } if t > 0.0 && rate * t < shape => {
                gamma_li(shape, rate * t) / ln_gamma(shape).exp()
            }
            _ => -self.ln_survivor(t).exp_m1(),
        }
    }

    pub fn hazard(&self, t: f64) -> Result<f64> {
        self.check(t)?;
        Ok((self.ln_density(t) - self.ln_survivor(t)).exp())
    }

    /// Log-probability of `T` in `(a, b]`.
    pub fn ln_interval(&self, a: f64, b: f64) -> f64 {
        let la = self.ln_survivor(a);
        let lb = self.ln_survivor(b);
        if lb == f64::NEG_INFINITY {
            return la;
        }
        // log(S(a) - S(b)) = log S(a) + log(1 - exp(lb - la))
        la + (-(lb - la).exp_m1()).ln()
    }

    /// Inverse CDF.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        self.validate()?;
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Domain(format!("probability must lie in [0, 1], got {p}")));
        }
        if p == 0.0 {
            return Ok(0.0);
        }
        if p == 1.0 {
            return Ok(f64::INFINITY);
        }
        Ok(match *self {
            SurvivalFamily::Exponential { rate } => -(-p).ln_1p() / rate,
            SurvivalFamily::Weibull { shape, scale } => scale * (-(-p).ln_1p()).powf(1.0 / shape),
            SurvivalFamily::Gamma { .. } => {
                let mut hi = self.mean().max(1e-300);
                while self.cdf(hi) < p {
                    hi *= 2.0;
                }
                let mut lo = 0.0;
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if self.cdf(mid) < p {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                    if hi - lo <= 1e-15 * hi {
                        break;
                    }
                }
                0.5 * (lo + hi)
            }
        })
    }

    pub fn mean(&self) -> f64 {
        match *self {
            SurvivalFamily::Exponential { rate } => 1.0 / rate,
            SurvivalFamily::Weibull { shape, scale } => {
                scale * ln_gamma(1.0 + 1.0 / shape).exp()
            }
            SurvivalFamily::Gamma { shape, rate } => shape / rate,
        }
    }

    pub fn median(&self) -> f64 {
        self.quantile(0.5).unwrap_or(f64::NAN)
    }

    /// Draws a survival time. Closed-form families use the inverse CDF; the
    /// gamma family uses Marsaglia-Tsang rejection.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            SurvivalFamily::Exponential { .. } | SurvivalFamily::Weibull { .. } => {
                let u: f64 = rng.random();
                self.quantile(u).expect("validated family")
            }
            SurvivalFamily::Gamma { shape, rate } => GammaDist::new(shape, 1.0 / rate)
                .expect("validated family")
                .sample(rng),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::integrate_semi_infinite;
    use approx::assert_relative_eq;

    fn families() -> Vec<SurvivalFamily> {
        vec![
            SurvivalFamily::exponential(0.7).unwrap(),
            SurvivalFamily::weibull(1.5, 10.0).unwrap(),
            SurvivalFamily::weibull(0.8, 2.0).unwrap(),
            SurvivalFamily::gamma(2.0, 1.0).unwrap(),
            SurvivalFamily::gamma(0.6, 3.0).unwrap(),
        ]
    }

    #[test]
    fn closed_form_values() {
        let e = SurvivalFamily::exponential(1.0).unwrap();
        assert_eq!(e.density(0.0).unwrap(), 1.0);
        assert_relative_eq!(e.survivor(2f64.ln()).unwrap(), 0.5, epsilon = 1e-15);
        let g = SurvivalFamily::gamma(2.0, 1.0).unwrap();
        assert_relative_eq!(g.density(1.0).unwrap(), (-1f64).exp(), epsilon = 1e-14);
        assert_relative_eq!(g.density(1.0).unwrap(), 0.367879, epsilon = 1e-6);
        for f in families() {
            assert_eq!(f.survivor(0.0).unwrap(), 1.0);
        }
    }

    #[test]
    fn weibull_shape_one_is_exponential() {
        let w = SurvivalFamily::weibull(1.0, 4.0).unwrap();
        let e = SurvivalFamily::exponential(0.25).unwrap();
        for t in [0.0, 0.3, 1.0, 7.5, 30.0] {
            assert_relative_eq!(w.density(t).unwrap(), e.density(t).unwrap(), max_relative = 1e-14);
            assert_relative_eq!(w.survivor(t).unwrap(), e.survivor(t).unwrap(), max_relative = 1e-14);
        }
    }

    #[test]
    fn gamma_density_matches_integrated_hazard() {
        // f(t) = h(t) exp(-∫ h), with the hazard integrated numerically
        let g = SurvivalFamily::gamma(2.0, 1.0).unwrap();
        let cum = crate::quadrature::integrate_adaptive(|s| g.hazard(s).unwrap(), 0.0, 1.0, 1e-12, 1e-14, 200)
            .unwrap()
            .value;
        let f = g.hazard(1.0).unwrap() * (-cum).exp();
        assert_relative_eq!(f, (-1f64).exp(), max_relative = 1e-10);
    }

    #[test]
    fn survivor_is_tail_integral_of_density() {
        for fam in families() {
            for &t in &[0.0, 0.1, 0.5, 1.0, 3.0, 10.0, 20.0] {
                let tail = integrate_semi_infinite(|s| fam.density(s).unwrap(), t, 1.0, 1e-12, 1e-15, 500)
                    .unwrap()
                    .value;
                let s = fam.survivor(t).unwrap();
                assert!((s - tail).abs() < 1e-8, "{fam:?} t={t}: S={s} tail={tail}");
            }
        }
    }

    #[test]
    fn survivor_derivative_is_minus_density() {
        for fam in families() {
            for &t in &[0.2, 1.0, 4.0] {
                let eps = 1e-6;
                let fd = (fam.survivor(t).unwrap() - fam.survivor(t + eps).unwrap()) / eps;
                let f = fam.density(t + 0.5 * eps).unwrap();
                assert!((fd - f).abs() < 1e-7 * f.max(1.0), "{fam:?} t={t}");
            }
        }
    }

    #[test]
    fn hazard_nonnegative_and_interval() {
        for fam in families() {
            for &t in &[0.01, 0.5, 2.0, 8.0] {
                assert!(fam.hazard(t).unwrap() >= 0.0);
            }
            let p = fam.ln_interval(0.5, 2.0).exp();
            let q = fam.survivor(0.5).unwrap() - fam.survivor(2.0).unwrap();
            assert_relative_eq!(p, q, max_relative = 1e-10);
        }
    }

    #[test]
    fn domain_errors() {
        let e = SurvivalFamily::exponential(1.0).unwrap();
        assert!(matches!(e.density(-1.0), Err(Error::Domain(_))));
        assert!(SurvivalFamily::exponential(0.0).is_err());
        assert!(SurvivalFamily::weibull(1.0, -2.0).is_err());
        let bad = SurvivalFamily::Exponential { rate: -1.0 };
        assert!(matches!(bad.density(1.0), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn quantile_inverts_cdf() {
        for fam in families() {
            assert_eq!(fam.quantile(0.0).unwrap(), 0.0);
            for &p in &[0.01, 0.3, 0.5, 0.9, 0.999] {
                let t = fam.quantile(p).unwrap();
                assert_relative_eq!(fam.cdf(t), p, max_relative = 1e-9);
            }
        }
        let w = SurvivalFamily::weibull(1.5, 10.0).unwrap();
        assert_relative_eq!(w.median(), 10.0 * 2f64.ln().powf(2.0 / 3.0), max_relative = 1e-14);
    }

    #[test]
    fn json_form() {
        let w = SurvivalFamily::weibull(1.5, 10.0).unwrap();
        let s = serde_json::to_string(&w).unwrap();
        assert_eq!(s, r#"{"family":"weibull","params":[1.5,10.0]}"#);
        let back: SurvivalFamily = serde_json::from_str(&s).unwrap();
        assert_eq!(back, w);
        assert!(serde_json::from_str::<SurvivalFamily>(r#"{"family":"gamma","params":[1.0]}"#).is_err());
    }
}
