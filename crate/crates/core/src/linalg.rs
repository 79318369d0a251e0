//! Small dense Gaussian linear algebra on top of `nalgebra`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Cholesky factor `L` of a symmetric positive definite matrix, stored column-major.
#[derive(Clone, Debug)]
pub struct Factor {
    n: usize,
    l: Vec<f64>,
    log_det: f64,
}

impl Factor {
    /// Factorises `m`; on failure retries once with `1e-10 * trace / n` added
    /// to the diagonal.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        let n = m.nrows();
        if n != m.ncols() {
            return Err(Error::Domain(format!("matrix is {}x{}, not square", n, m.ncols())));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NotPositiveDefinite("non-finite entries".into()));
        }
        let chol = match nalgebra::Cholesky::new(m.clone()) {
            Some(c) => c,
            None => {
                let jitter = 1e-10 * m.trace() / n.max(1) as f64;
                let mut m = m;
                for i in 0..n {
                    m[(i, i)] += jitter;
                }
                nalgebra::Cholesky::new(m).ok_or_else(|| {
                    Error::NotPositiveDefinite(format!("{n}x{n} covariance after jitter {jitter:e}"))
                })?
            }
        };
        let l = chol.unpack();
        let log_det = 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
        Ok(Factor {
            n,
            l: l.as_slice().to_vec(),
            log_det,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// `log |Σ|`.
    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.l[j * self.n + i]
    }

    /// Overwrites `v` with `L⁻¹ v`.
    pub fn forward_solve(&self, v: &mut [f64]) {
        let n = self.n;
        debug_assert_eq!(v.len(), n);
        for j in 0..n {
            let col = &self.l[j * n..(j + 1) * n];
            let vj = v[j] / col[j];
            v[j] = vj;
            for i in j + 1..n {
                v[i] -= col[i] * vj;
            }
        }
    }

    /// Overwrites `v` with `L⁻ᵀ v`.
    pub fn backward_solve(&self, v: &mut [f64]) {
        let n = self.n;
        for j in (0..n).rev() {
            let col = &self.l[j * n..(j + 1) * n];
            let mut s = v[j];
            for i in j + 1..n {
                s -= col[i] * v[i];
            }
            v[j] = s / col[j];
        }
    }

    /// `Σ⁻¹ b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut v = b.to_vec();
        self.forward_solve(&mut v);
        self.backward_solve(&mut v);
        v
    }

    /// `rᵀ Σ⁻¹ r`.
    pub fn quad_form(&self, r: &[f64]) -> f64 {
        let mut v = r.to_vec();
        self.forward_solve(&mut v);
        v.iter().map(|x| x * x).sum()
    }

    /// Log density of `N(0, Σ)` at `r`.
    pub fn ln_normal(&self, r: &[f64]) -> f64 {
        -0.5 * (self.n as f64 * LN_2PI + self.log_det + self.quad_form(r))
    }

    /// `L z`.
    pub fn mul_lower(&self, z: &[f64]) -> Vec<f64> {
        lower_mul(&self.l, self.n, z)
    }

    pub fn lower(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.n, self.n, &self.l)
    }
}

fn lower_mul(l: &[f64], n: usize, z: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for j in 0..n {
        let zj = z[j];
        if zj == 0.0 {
            continue;
        }
        let col = &l[j * n..(j + 1) * n];
        for i in j..n {
            out[i] += col[i] * zj;
        }
    }
    out
}

/// Log density of `N(mean, Σ)` evaluated at `y`.
pub fn ln_normal_density(y: &[f64], mean: &[f64], factor: &Factor) -> f64 {
    let r: Vec<f64> = y.iter().zip(mean).map(|(a, b)| a - b).collect();
    factor.ln_normal(&r)
}

/// Lower-triangular square root of a positive semidefinite matrix.
///
/// Pivots below `rel_tol * max diagonal` are treated as exact zeros, so
/// conditional covariances with observed grid points factor cleanly.
#[derive(Clone, Debug)]
pub struct PsdRoot {
    n: usize,
    l: Vec<f64>,
}

impl PsdRoot {
    pub fn new(m: &DMatrix<f64>, rel_tol: f64) -> Result<Self> {
        let n = m.nrows();
        let scale = (0..n).map(|i| m[(i, i)].abs()).fold(0.0, f64::max);
        let tol = rel_tol * scale.max(f64::MIN_POSITIVE);
        let mut l = vec![0.0; n * n];
        for j in 0..n {
            let mut d = m[(j, j)];
            for k in 0..j {
                let ljk = l[k * n + j];
                d -= ljk * ljk;
            }
            if d < -1e3 * tol.max(1e-12 * scale) {
                return Err(Error::NotPositiveDefinite(format!(
                    "negative pivot {d:e} at index {j} of {n}x{n} conditional covariance"
                )));
            }
            if d <= tol {
                continue;
            }
            let djj = d.sqrt();
            l[j * n + j] = djj;
            for i in j + 1..n {
                let mut s = m[(i, j)];
                for k in 0..j {
                    s -= l[k * n + i] * l[k * n + j];
                }
                l[j * n + i] = s / djj;
            }
        }
        Ok(PsdRoot { n, l })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// `L z`.
    pub fn mul(&self, z: &[f64]) -> Vec<f64> {
        lower_mul(&self.l, self.n, z)
    }

    /// Writes `mean + L z` into `out`.
    pub fn affine_into(&self, mean: &[f64], z: &[f64], out: &mut [f64]) {
        let n = self.n;
        out.copy_from_slice(mean);
        for j in 0..n {
            let zj = z[j];
            if zj == 0.0 {
                continue;
            }
            let col = &self.l[j * n..(j + 1) * n];
            for i in j..n {
                out[i] += col[i] * zj;
            }
        }
    }
}

/// Conditions a Gaussian vector on exact or noisy observations of a second block.
///
/// With joint covariance `[[K_gg, K_go], [K_og, K_oo + noise I]]`, returns the
/// conditional mean `mu_g + K_go (K_oo + noise I)⁻¹ (x - mu_o)` and covariance
/// `K_gg - K_go (K_oo + noise I)⁻¹ K_og`.
pub fn condition_gaussian(
    mu_g: &DVector<f64>,
    k_gg: &DMatrix<f64>,
    k_go: &DMatrix<f64>,
    mu_o: &DVector<f64>,
    k_oo: &DMatrix<f64>,
    noise: f64,
    x: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let m = k_oo.nrows();
    if m == 0 {
        return Ok((mu_g.clone(), k_gg.clone()));
    }
    let mut c = k_oo.clone();
    for i in 0..m {
        c[(i, i)] += noise;
    }
    let f = Factor::new(c)?;
    let resid: Vec<f64> = x.iter().zip(mu_o.iter()).map(|(a, b)| a - b).collect();
    let w = f.solve(&resid);
    let mean = mu_g + k_go * DVector::from_vec(w);
    // K_go C⁻¹ K_og = (L⁻¹ K_og)ᵀ (L⁻¹ K_og)
    let g = k_gg.nrows();
    let mut a = DMatrix::zeros(m, g);
    for col in 0..g {
        let mut v: Vec<f64> = (0..m).map(|i| k_go[(col, i)]).collect();
        f.forward_solve(&mut v);
        for i in 0..m {
            a[(i, col)] = v[i];
        }
    }
    let mut cov = k_gg - a.transpose() * &a;
    // symmetrise rounding
    for i in 0..g {
        for j in 0..i {
            let v = 0.5 * (cov[(i, j)] + cov[(j, i)]);
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    Ok((mean, cov))
}
