//! `theta = (lambda, psi)`: survival-family parameters and the conditional
//! Gaussian parameters, with a flat-vector view used by the optimisers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::revival::{CovarianceModel, MeanCurve, MeanModel, RevivalModel, TemporalKernel};
use crate::survival::SurvivalFamily;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub lambda: SurvivalFamily,
    pub psi: RevivalModel,
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        self.lambda.validate()?;
        self.psi.validate()
    }

    /// The desk-scale reference model: Weibull(1.5, 10), `alpha(t) = 0.1 t`,
    /// `m0(z) = 2 ln(1 + z)`, arm offsets (0, 1), OU kernel with
    /// `sigma_b2 = 1`, `sigma_g2 = 2`, `rho = 1`, `sigma_e2 = 0.25`.
    pub fn reference() -> Self {
        ModelParams {
            lambda: SurvivalFamily::Weibull { shape: 1.5, scale: 10.0 },
            psi: RevivalModel {
                mean: MeanModel {
                    alpha: vec![0.1],
                    curve: MeanCurve::log_linear(2.0, 0.0),
                    beta: vec![0.0, 1.0],
                },
                covariance: CovarianceModel {
                    sigma_b2: 1.0,
                    kernel: TemporalKernel::Exponential { variance: 2.0, range: 1.0 },
                    sigma_e2: 0.25,
                    extra_kernels: vec![],
                },
            },
        }
    }

    pub fn lambda_values(&self) -> Vec<f64> {
        self.lambda.params()
    }

    pub fn lambda_names(&self) -> Vec<String> {
        self.lambda
            .kind()
            .param_names()
            .iter()
            .map(|n| format!("lambda.{n}"))
            .collect()
    }

    pub fn with_lambda(&self, v: &[f64]) -> Result<Self> {
        Ok(ModelParams {
            lambda: SurvivalFamily::from_params(self.lambda.kind(), v)?,
            psi: self.psi.clone(),
        })
    }

    pub fn psi_values(&self) -> Vec<f64> {
        psi_values(&self.psi)
    }

    pub fn psi_names(&self) -> Vec<String> {
        psi_names(&self.psi)
    }

    pub fn with_psi(&self, v: &[f64]) -> Result<Self> {
        Ok(ModelParams {
            lambda: self.lambda,
            psi: with_psi(&self.psi, v)?,
        })
    }

    /// Which entries of `values()` are constrained positive.
    pub fn positive_mask(&self) -> Vec<bool> {
        let mut m = vec![true; self.lambda_values().len()];
        m.extend(psi_positive_mask(&self.psi));
        m
    }

    pub fn values(&self) -> Vec<f64> {
        let mut v = self.lambda_values();
        v.extend(self.psi_values());
        v
    }

    pub fn names(&self) -> Vec<String> {
        let mut v = self.lambda_names();
        v.extend(self.psi_names());
        v
    }

    pub fn n_lambda(&self) -> usize {
        self.lambda.kind().n_params()
    }

    pub fn with_values(&self, v: &[f64]) -> Result<Self> {
        let nl = self.n_lambda();
        if v.len() != nl + self.psi_values().len() {
            return Err(Error::InvalidParameter(format!(
                "expected {} parameters, got {}",
                nl + self.psi_values().len(),
                v.len()
            )));
        }
        self.with_lambda(&v[..nl])?.with_psi(&v[nl..])
    }
}

pub fn psi_values(psi: &RevivalModel) -> Vec<f64> {
    let mut v = psi.mean.coefficients();
    v.extend(covariance_values(&psi.covariance));
    v
}

pub fn covariance_values(c: &CovarianceModel) -> Vec<f64> {
    let mut v = vec![c.sigma_b2, c.kernel.variance(), c.kernel.range(), c.sigma_e2];
    for k in &c.extra_kernels {
        v.push(k.variance());
        v.push(k.range());
    }
    v
}

pub fn covariance_names(c: &CovarianceModel) -> Vec<String> {
    let mut v: Vec<String> = ["sigma_b2", "sigma_g2", "rho", "sigma_e2"]
        .iter()
        .map(|s| format!("psi.{s}"))
        .collect();
    for i in 0..c.extra_kernels.len() {
        v.push(format!("psi.extra{}_variance", i + 1));
        v.push(format!("psi.extra{}_range", i + 1));
    }
    v
}

pub fn with_covariance(c: &CovarianceModel, v: &[f64]) -> Result<CovarianceModel> {
    if v.len() != 4 + 2 * c.extra_kernels.len() {
        return Err(Error::InvalidParameter("wrong number of covariance parameters".into()));
    }
    let out = CovarianceModel {
        sigma_b2: v[0],
        kernel: c.kernel.with(v[1], v[2]),
        sigma_e2: v[3],
        extra_kernels: c
            .extra_kernels
            .iter()
            .enumerate()
            .map(|(i, k)| k.with(v[4 + 2 * i], v[5 + 2 * i]))
            .collect(),
    };
    out.validate()?;
    Ok(out)
}

pub fn psi_names(psi: &RevivalModel) -> Vec<String> {
    let mut v: Vec<String> = psi
        .mean
        .coefficient_names()
        .into_iter()
        .map(|n| format!("psi.{n}"))
        .collect();
    v.extend(covariance_names(&psi.covariance));
    v
}

pub fn psi_positive_mask(psi: &RevivalModel) -> Vec<bool> {
    let mut m = vec![false; psi.mean.n_coefficients()];
    m.extend(vec![true; covariance_values(&psi.covariance).len()]);
    m
}

pub fn with_psi(psi: &RevivalModel, v: &[f64]) -> Result<RevivalModel> {
    let nm = psi.mean.n_coefficients();
    if v.len() < nm {
        return Err(Error::InvalidParameter("wrong number of psi parameters".into()));
    }
    let out = RevivalModel {
        mean: psi.mean.with_coefficients(&v[..nm]),
        covariance: with_covariance(&psi.covariance, &v[nm..])?,
    };
    out.validate()?;
    Ok(out)
}
