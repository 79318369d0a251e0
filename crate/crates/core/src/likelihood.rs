//! Record and dataset log-likelihoods, the four-factor split, staged and joint
//! estimation, and the censored-record compatibility diagnostic.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{Dataset, PatientRecord, Terminal};
use crate::density::{GridDensity, QuadratureConfig};
use crate::error::{Error, Result};
use crate::linalg::Factor;
use crate::optimize::{fd_hessian, minimize, OptimOptions};
use crate::params::{covariance_values, with_covariance, ModelParams};
use crate::quadrature::integrate_semi_infinite;
use crate::revival::{CovarianceModel, MeanModel, RevivalModel};
use crate::survival::{FamilyKind, SurvivalFamily};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

fn check_record(record: &PatientRecord) -> Result<()> {
    let v = record.validate();
    if v.is_empty() {
        Ok(())
    } else {
        let msg: Vec<String> = v.iter().map(ToString::to_string).collect();
        Err(Error::Data(msg.join("; ")).in_record(&record.patient_id))
    }
}

/// Log survival factor and the remaining (Gaussian) part of one record.
fn record_parts(record: &PatientRecord, params: &ModelParams, qc: &QuadratureConfig) -> Result<(f64, f64)> {
    let (ts, y) = record.real_prefix();
    let mut g = GridDensity::new(ts, &y, record.arm(), params)?;
    let lambda = &params.lambda;
    Ok(match record.terminal {
        Terminal::Death(t) => {
            let lf = lambda.ln_density(t);
            let total = g.ln_q(t);
            (lf, total - lf)
        }
        Terminal::Censored(c) => {
            let ls = lambda.ln_survivor(c);
            let total = g.ln_integral(c, None, qc)?;
            (ls, total - ls)
        }
        Terminal::Interval { lower, upper } => {
            let li = lambda.ln_interval(lower, upper);
            let total = g.ln_integral(lower, Some(upper), qc)?;
            (li, total - li)
        }
    })
}

/// Log contribution of one record: `log q` for an observed death, `log p`
/// (tail mass beyond the censoring time) for a censored record, and the log
/// interval mass for an interval-censored death.
pub fn record_loglik(record: &PatientRecord, params: &ModelParams, qc: &QuadratureConfig) -> Result<f64> {
    check_record(record)?;
    record_parts(record, params, qc)
        .map(|(a, b)| a + b)
        .map_err(|e| e.in_record(&record.patient_id))
}

fn per_record<T: Send>(
    ds: &Dataset,
    f: impl Fn(&PatientRecord) -> Result<T> + Sync + Send,
) -> Result<Vec<T>> {
    let out: Vec<Result<T>> = ds
        .records()
        .par_iter()
        .map(|r| f(r).map_err(|e| e.in_record(&r.patient_id)))
        .collect();
    out.into_iter().collect()
}

/// Sum of record log-likelihoods, accumulated in record order.
pub fn dataset_loglik(ds: &Dataset, params: &ModelParams, qc: &QuadratureConfig) -> Result<f64> {
    params.validate()?;
    qc.validate()?;
    let terms = per_record(ds, |r| {
        check_record(r)?;
        record_parts(r, params, qc).map(|(a, b)| a + b)
    })?;
    Ok(terms.into_iter().sum())
}

/// The likelihood split into survival and conditional Gaussian factors for
/// uncensored (`a`, `c`) and censored (`b`, `d`) records.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FourFactors {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl FourFactors {
    pub fn total(&self) -> f64 {
        self.a + self.b + self.c + self.d
    }
}

/// Interval-censored deaths are grouped with the censored records, with
/// `log(S(lower) - S(upper))` as their survival factor.
pub fn four_factor(ds: &Dataset, params: &ModelParams, qc: &QuadratureConfig) -> Result<FourFactors> {
    params.validate()?;
    qc.validate()?;
    let parts = per_record(ds, |r| {
        check_record(r)?;
        record_parts(r, params, qc).map(|p| (r.terminal, p))
    })?;
    let mut ff = FourFactors::default();
    for (term, (surv, rest)) in parts {
        if matches!(term, Terminal::Death(_)) {
            ff.a += surv;
            ff.c += rest;
        } else {
            ff.b += surv;
            ff.d += rest;
        }
    }
    Ok(ff)
}

/// `A + B`: the survival-only likelihood.
pub fn survival_loglik(ds: &Dataset, lambda: &SurvivalFamily) -> f64 {
    ds.records()
        .iter()
        .map(|r| match r.terminal {
            Terminal::Death(t) => lambda.ln_density(t),
            Terminal::Censored(c) => lambda.ln_survivor(c),
            Terminal::Interval { lower, upper } => lambda.ln_interval(lower, upper),
        })
        .sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurvivalFit {
    pub family: SurvivalFamily,
    pub loglik: f64,
    pub iterations: usize,
}

/// Maximises `A + B` over the survival parameters.
pub fn fit_marginal_survival(ds: &Dataset, kind: FamilyKind, opts: &OptimOptions) -> Result<SurvivalFit> {
    if ds.is_empty() {
        return Err(Error::Data("empty dataset".into()));
    }
    let deaths = ds
        .records()
        .iter()
        .filter(|r| !matches!(r.terminal, Terminal::Censored(_)))
        .count();
    if deaths == 0 {
        return Err(Error::Boundary(
            "no deaths observed: the survival likelihood increases without bound towards zero hazard".into(),
        ));
    }
    let exposure: f64 = ds.records().iter().map(|r| r.terminal.time()).sum();
    let has_interval = ds.records().iter().any(|r| matches!(r.terminal, Terminal::Interval { .. }));
    let rate0 = deaths as f64 / exposure;
    if kind == FamilyKind::Exponential && !has_interval {
        let family = SurvivalFamily::exponential(rate0)?;
        return Ok(SurvivalFit {
            loglik: survival_loglik(ds, &family),
            family,
            iterations: 0,
        });
    }
    let start = match kind {
        FamilyKind::Exponential => vec![rate0],
        FamilyKind::Weibull => vec![1.0, 1.0 / rate0],
        FamilyKind::Gamma => vec![1.0, rate0],
    };
    let u0: Vec<f64> = start.iter().map(|v| v.ln()).collect();
    let obj = |u: &[f64]| {
        let p: Vec<f64> = u.iter().map(|v| v.exp()).collect();
        match SurvivalFamily::from_params(kind, &p) {
            Ok(f) => -survival_loglik(ds, &f),
            Err(_) => f64::INFINITY,
        }
    };
    let r = minimize(obj, &u0, opts);
    if !r.converged {
        return Err(Error::NonConvergence {
            iterations: r.iterations,
            last: -r.f,
            trace: r.trace,
        });
    }
    let p: Vec<f64> = r.x.iter().map(|v| v.exp()).collect();
    let family = SurvivalFamily::from_params(kind, &p)?;
    Ok(SurvivalFit {
        loglik: survival_loglik(ds, &family),
        family,
        iterations: r.iterations,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianFit {
    pub psi: RevivalModel,
    /// Maximised `C`.
    pub loglik: f64,
    pub iterations: usize,
    pub records_used: usize,
}

struct GaussRecord<'a> {
    ts: &'a [f64],
    y: Vec<f64>,
    t: f64,
    arm: usize,
}

fn gaussian_records(ds: &Dataset) -> Vec<GaussRecord<'_>> {
    ds.records()
        .iter()
        .filter_map(|r| match r.terminal {
            Terminal::Death(t) if r.real_len() > 0 => {
                let (ts, y) = r.real_prefix();
                Some(GaussRecord { ts, y, t, arm: r.arm() })
            }
            _ => None,
        })
        .collect()
}

/// Generalised least squares for the linear mean coefficients at a fixed
/// covariance; returns the coefficients and the profiled `C`.
fn gls(recs: &[GaussRecord<'_>], mean: &MeanModel, cov: &CovarianceModel) -> Result<(Vec<f64>, f64)> {
    let p = mean.n_coefficients();
    let mut xtx = DMatrix::<f64>::zeros(p, p);
    let mut xty = DVector::<f64>::zeros(p);
    let mut logdet = 0.0;
    let mut yy = 0.0;
    let mut n = 0usize;
    let mut row = vec![0.0; p];
    for r in recs {
        let k = r.ts.len();
        let f = cov.factor(r.ts)?;
        logdet += f.log_det();
        n += k;
        // columns of L⁻¹ X
        let mut cols = vec![vec![0.0; k]; p];
        for (i, &s) in r.ts.iter().enumerate() {
            mean.design_row(s, r.t, r.arm, &mut row);
            for j in 0..p {
                cols[j][i] = row[j];
            }
        }
        for c in cols.iter_mut() {
            f.forward_solve(c);
        }
        let mut wy = r.y.clone();
        f.forward_solve(&mut wy);
        for a in 0..p {
            for b in 0..=a {
                let v: f64 = cols[a].iter().zip(&cols[b]).map(|(x, y)| x * y).sum();
                xtx[(a, b)] += v;
            }
            xty[a] += cols[a].iter().zip(&wy).map(|(x, y)| x * y).sum::<f64>();
        }
        yy += wy.iter().map(|v| v * v).sum::<f64>();
    }
    for a in 0..p {
        for b in 0..a {
            xtx[(b, a)] = xtx[(a, b)];
        }
    }
    let chol = nalgebra::Cholesky::new(xtx).ok_or_else(|| {
        Error::NotPositiveDefinite("mean design is rank deficient on the uncensored records".into())
    })?;
    let coef = chol.solve(&xty);
    // residual sum of squares: yᵀy - 2 bᵀXᵀy + bᵀXᵀXb = yᵀy - bᵀXᵀy at the optimum
    let rss = (yy - coef.dot(&xty)).max(0.0);
    let ll = -0.5 * (n as f64 * LN_2PI + logdet + rss);
    Ok((coef.iter().copied().collect(), ll))
}

/// Maximises `C` over `psi` using the uncensored records only. The linear
/// mean coefficients are profiled out by GLS; the covariance parameters are
/// optimised on the log scale unless `fixed_covariance` is set.
pub fn fit_conditional_gaussian(
    ds: &Dataset,
    template: &RevivalModel,
    fixed_covariance: bool,
    opts: &OptimOptions,
) -> Result<GaussianFit> {
    template.validate()?;
    let recs = gaussian_records(ds);
    if recs.is_empty() {
        return Err(Error::Data("no uncensored record carries a measurement".into()));
    }
    for r in &recs {
        template.mean.arm_offset(r.arm, 1.0)?;
    }
    let mean = &template.mean;
    if fixed_covariance {
        let (coef, ll) = gls(&recs, mean, &template.covariance)?;
        return Ok(GaussianFit {
            psi: RevivalModel {
                mean: mean.with_coefficients(&coef),
                covariance: template.covariance.clone(),
            },
            loglik: ll,
            iterations: 0,
            records_used: recs.len(),
        });
    }
    let base = &template.covariance;
    let u0: Vec<f64> = covariance_values(base).iter().map(|v| v.ln()).collect();
    let obj = |u: &[f64]| {
        let v: Vec<f64> = u.iter().map(|x| x.exp()).collect();
        match with_covariance(base, &v).and_then(|c| gls(&recs, mean, &c)) {
            Ok((_, ll)) => -ll,
            Err(_) => f64::INFINITY,
        }
    };
    let r = minimize(obj, &u0, opts);
    if !r.converged {
        return Err(Error::NonConvergence {
            iterations: r.iterations,
            last: -r.f,
            trace: r.trace,
        });
    }
    let v: Vec<f64> = r.x.iter().map(|x| x.exp()).collect();
    let covariance = with_covariance(base, &v)?;
    let (coef, ll) = gls(&recs, mean, &covariance)?;
    Ok(GaussianFit {
        psi: RevivalModel {
            mean: mean.with_coefficients(&coef),
            covariance,
        },
        loglik: ll,
        iterations: r.iterations,
        records_used: recs.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: ModelParams,
    pub names: Vec<String>,
    pub estimates: Vec<f64>,
    /// Square roots of the diagonal of the inverse observed information;
    /// absent when the information matrix is not positive definite.
    pub standard_errors: Option<Vec<f64>>,
    pub information_note: Option<String>,
    pub loglik: f64,
    pub initial_loglik: f64,
    pub converged: bool,
    pub iterations: usize,
    pub evaluations: usize,
    pub four_factors: FourFactors,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitOptions {
    pub optim: OptimOptions,
    /// Relative step of the numerical Hessian.
    pub hessian_step: f64,
    pub standard_errors: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            optim: OptimOptions::default(),
            hessian_step: 1e-4,
            standard_errors: true,
        }
    }
}

/// Staged estimates: survival parameters from `A + B`, conditional Gaussian
/// parameters from `C`.
pub fn staged_estimates(ds: &Dataset, template: &ModelParams, opts: &OptimOptions) -> Result<ModelParams> {
    let lambda = fit_marginal_survival(ds, template.lambda.kind(), opts)?.family;
    let psi = fit_conditional_gaussian(ds, &template.psi, false, opts)?.psi;
    Ok(ModelParams { lambda, psi })
}

/// Standard errors from the numerically differentiated observed information
/// in the natural parameterisation.
pub fn observed_information_se(
    ds: &Dataset,
    params: &ModelParams,
    qc: &QuadratureConfig,
    rel_step: f64,
) -> std::result::Result<Vec<f64>, String> {
    let x = params.values();
    let h = fd_hessian(
        |v: &[f64]| match params.with_values(v) {
            Ok(p) => -dataset_loglik(ds, &p, qc).unwrap_or(f64::NAN),
            Err(_) => f64::NAN,
        },
        &x,
        rel_step,
    );
    if h.iter().any(|v| !v.is_finite()) {
        return Err("observed information has non-finite entries (estimate near the boundary)".into());
    }
    let chol = nalgebra::Cholesky::new(h)
        .ok_or_else(|| "observed information is singular or not positive definite".to_string())?;
    let inv = chol.inverse();
    Ok((0..x.len()).map(|i| inv[(i, i)].sqrt()).collect())
}

/// Maximises the full log-likelihood from `init`, with positive parameters
/// optimised on the log scale.
pub fn fit_joint(ds: &Dataset, init: &ModelParams, qc: &QuadratureConfig, opts: &FitOptions) -> Result<FitResult> {
    init.validate()?;
    let initial_loglik = dataset_loglik(ds, init, qc)?;
    let mask = init.positive_mask();
    let to_u = |v: &[f64]| -> Vec<f64> {
        v.iter().zip(&mask).map(|(&x, &pos)| if pos { x.ln() } else { x }).collect()
    };
    let from_u = |u: &[f64]| -> Vec<f64> {
        u.iter().zip(&mask).map(|(&x, &pos)| if pos { x.exp() } else { x }).collect()
    };
    let obj = |u: &[f64]| match init.with_values(&from_u(u)) {
        Ok(p) => dataset_loglik(ds, &p, qc).map_or(f64::INFINITY, |l| -l),
        Err(_) => f64::INFINITY,
    };
    let r = minimize(obj, &to_u(&init.values()), &opts.optim);
    let mut params = init.with_values(&from_u(&r.x))?;
    let mut loglik = -r.f;
    if loglik < initial_loglik {
        params = init.clone();
        loglik = initial_loglik;
    }
    if !r.converged {
        return Err(Error::NonConvergence {
            iterations: r.iterations,
            last: loglik,
            trace: r.trace.iter().map(|v| -v).collect(),
        });
    }
    let (standard_errors, information_note) = if opts.standard_errors {
        match observed_information_se(ds, &params, qc, opts.hessian_step) {
            Ok(se) => (Some(se), None),
            Err(note) => (None, Some(note)),
        }
    } else {
        (None, None)
    };
    let four_factors = four_factor(ds, &params, qc)?;
    Ok(FitResult {
        names: params.names(),
        estimates: params.values(),
        params,
        standard_errors,
        information_note,
        loglik,
        initial_loglik,
        converged: r.converged,
        iterations: r.iterations,
        evaluations: r.evaluations,
        four_factors,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompatibilityEntry {
    pub patient_id: String,
    pub censored: bool,
    pub z: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompatibilityReport {
    pub entries: Vec<CompatibilityEntry>,
    pub skipped: Vec<(String, String)>,
    /// Standardised rank-sum statistic, censored against uncensored scores.
    pub statistic: Option<f64>,
    pub flagged: bool,
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("valid")
}

/// Standardised rank-sum (Mann-Whitney) statistic of `a` against `b`.
pub fn rank_sum_z(a: &[f64], b: &[f64]) -> Option<f64> {
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    if a.is_empty() || b.is_empty() {
        return None;
    }
    let mut all: Vec<(f64, bool)> = a.iter().map(|&v| (v, true)).chain(b.iter().map(|&v| (v, false))).collect();
    all.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut rank_a = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let mid = 0.5 * ((i + 1) as f64 + (j + 1) as f64);
        rank_a += mid * all[i..=j].iter().filter(|p| p.1).count() as f64;
        i = j + 1;
    }
    let u = rank_a - n1 * (n1 + 1.0) / 2.0;
    let sd = (n1 * n2 * (n1 + n2 + 1.0) / 12.0).sqrt();
    Some((u - n1 * n2 / 2.0) / sd)
}

/// Scores each record by the precision-weighted average of its measurements,
/// `g = wᵀy` with `w = Σ⁻¹1 / sqrt(1ᵀΣ⁻¹1)`, which has unit variance given the
/// survival time. Uncensored records score `g - wᵀγ(t)`; censored records
/// score the normal quantile of the probability integral transform of `g`
/// under the mixture of `N(wᵀγ(t), 1)` over survival times beyond censoring.
/// Under the model both sets of scores are standard normal, and the rank-sum
/// statistic compares them.
pub fn censored_compatibility(ds: &Dataset, params: &ModelParams, qc: &QuadratureConfig) -> Result<CompatibilityReport> {
    params.validate()?;
    let has_censored = ds.records().iter().any(|r| r.terminal.is_censored());
    if !has_censored {
        return Ok(CompatibilityReport { entries: vec![], skipped: vec![], statistic: None, flagged: false });
    }
    let normal = std_normal();
    let lambda = params.lambda;
    let mean = &params.psi.mean;
    let scale = qc.tail_scale.unwrap_or_else(|| lambda.median());
    let scored: Vec<std::result::Result<CompatibilityEntry, (String, String)>> = ds
        .records()
        .par_iter()
        .map(|r| {
            let id = r.patient_id.clone();
            let (ts, y) = r.real_prefix();
            if ts.is_empty() {
                return Err((id, "no real-valued measurements".to_string()));
            }
            let factor: Factor = params.psi.covariance.factor(ts).map_err(|e| (id.clone(), e.to_string()))?;
            let ones = vec![1.0; ts.len()];
            let sinv1 = factor.solve(&ones);
            let norm = sinv1.iter().sum::<f64>().sqrt();
            let w: Vec<f64> = sinv1.iter().map(|v| v / norm).collect();
            let g: f64 = w.iter().zip(&y).map(|(a, b)| a * b).sum();
            let mut buf = vec![0.0; ts.len()];
            let mut centre = |t: f64| {
                mean.mean_into(ts, t, r.arm(), &mut buf);
                w.iter().zip(&buf).map(|(a, b)| a * b).sum::<f64>()
            };
            match r.terminal {
                Terminal::Death(t) => Ok(CompatibilityEntry { patient_id: id, censored: false, z: g - centre(t) }),
                Terminal::Censored(_) | Terminal::Interval { .. } => {
                    let (lo, hi) = match r.terminal {
                        Terminal::Censored(c) => (c.max(ts[ts.len() - 1]), f64::INFINITY),
                        Terminal::Interval { lower, upper } => (lower, upper),
                        Terminal::Death(_) => unreachable!(),
                    };
                    let mass = (lambda.ln_survivor(lo)).exp() - if hi.is_finite() { lambda.ln_survivor(hi).exp() } else { 0.0 };
                    if !(mass > 0.0) {
                        return Err((id, "no survival mass beyond the censoring time".to_string()));
                    }
                    let integrand = |t: f64| {
                        if t > hi {
                            0.0
                        } else {
                            lambda.ln_density(t).exp() * normal.cdf(g - centre(t))
                        }
                    };
                    let res = if hi.is_finite() {
                        crate::quadrature::integrate_adaptive(integrand, lo, hi, qc.rel_tol, qc.abs_tol * mass, qc.max_subdivisions)
                    } else {
                        integrate_semi_infinite(integrand, lo, scale, qc.rel_tol, qc.abs_tol * mass, qc.max_subdivisions)
                    };
                    let u = res.map_err(|e| (id.clone(), e.to_string()))?.value / mass;
                    let u = u.clamp(1e-15, 1.0 - 1e-15);
                    Ok(CompatibilityEntry { patient_id: id, censored: true, z: normal.inverse_cdf(u) })
                }
            }
        })
        .collect();
    let mut entries = Vec::new();
    let mut skipped = Vec::new();
    for s in scored {
        match s {
            Ok(e) => entries.push(e),
            Err(sk) => skipped.push(sk),
        }
    }
    let cz: Vec<f64> = entries.iter().filter(|e| e.censored).map(|e| e.z).collect();
    let uz: Vec<f64> = entries.iter().filter(|e| !e.censored).map(|e| e.z).collect();
    let statistic = rank_sum_z(&cz, &uz);
    Ok(CompatibilityReport {
        flagged: statistic.is_some_and(|z| z.abs() > 1.96),
        entries,
        skipped,
        statistic,
    })
}
