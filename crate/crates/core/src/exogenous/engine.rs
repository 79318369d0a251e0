//! Conditional Gaussian paths on a grid and the Monte Carlo averaging loop.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use super::{HazardLink, MCConfig, McEstimate, Sampling};
use crate::error::{Error, Result};
use crate::linalg::{condition_gaussian, PsdRoot};
use crate::rng::keyed_stream;

const CHUNK: usize = 1024;
const LATTICE_STREAM: u64 = 1 << 40;

/// A Gaussian process observed (possibly with noise) at finitely many times.
pub(crate) trait PathModel {
    fn prior_mean(&self, s: f64) -> f64;
    fn cov(&self, a: f64, b: f64) -> f64;
    fn obs_noise(&self) -> f64;
}

/// Law of a Gaussian process on a grid given its observations: draws are
/// `mean + R z` with `R` a square root of the conditional covariance.
#[derive(Clone, Debug)]
pub struct ConditionalPaths {
    grid: Vec<f64>,
    mean: Vec<f64>,
    root: PsdRoot,
}

impl ConditionalPaths {
    pub(crate) fn new(model: &dyn PathModel, grid: Vec<f64>, ts: &[f64], x: &[f64]) -> Result<Self> {
        if ts.len() != x.len() {
            return Err(Error::Domain(format!("{} observation times but {} values", ts.len(), x.len())));
        }
        if ts.iter().chain(x).any(|v| !v.is_finite()) {
            return Err(Error::Domain("observations must be finite".into()));
        }
        let g = grid.len();
        let m = ts.len();
        let mu_g = DVector::from_iterator(g, grid.iter().map(|&s| model.prior_mean(s)));
        let k_gg = DMatrix::from_fn(g, g, |i, j| model.cov(grid[i], grid[j]));
        let k_go = DMatrix::from_fn(g, m, |i, j| model.cov(grid[i], ts[j]));
        let mu_o = DVector::from_iterator(m, ts.iter().map(|&s| model.prior_mean(s)));
        let k_oo = DMatrix::from_fn(m, m, |i, j| model.cov(ts[i], ts[j]));
        let xv = DVector::from_column_slice(x);
        let (mean, cov) = condition_gaussian(&mu_g, &k_gg, &k_go, &mu_o, &k_oo, model.obs_noise(), &xv)?;
        let root = PsdRoot::new(&cov, 1e-10)?;
        Ok(ConditionalPaths {
            grid,
            mean: mean.iter().copied().collect(),
            root,
        })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn dim(&self) -> usize {
        self.grid.len()
    }

    /// Writes `mean + R z` into `out`.
    pub fn path_into(&self, z: &[f64], out: &mut [f64]) {
        self.root.affine_into(&self.mean, z, out);
    }

    /// Same covariance, different mean: conditioning on other values at the
    /// same observation times.
    pub(crate) fn with_mean(&self, mean: Vec<f64>) -> Self {
        ConditionalPaths {
            grid: self.grid.clone(),
            mean,
            root: self.root.clone(),
        }
    }
}

/// `m` equal intervals on `[a, b]`, endpoints included.
pub(crate) fn uniform_grid(a: f64, b: f64, m: usize) -> Vec<f64> {
    let mut g: Vec<f64> = (0..=m).map(|i| a + (b - a) * i as f64 / m as f64).collect();
    g[m] = b;
    g
}

/// Trapezoid integral of `h(path)` over `grid[..=last]`.
pub(crate) fn hazard_integral(grid: &[f64], path: &[f64], link: &HazardLink, last: usize) -> f64 {
    let mut acc = 0.0;
    let mut prev = link.eval(path[0]);
    for i in 1..=last {
        let h = link.eval(path[i]);
        acc += 0.5 * (grid[i] - grid[i - 1]) * (prev + h);
        prev = h;
    }
    acc
}

#[derive(Clone, Copy, Default)]
struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, v: f64) {
        self.n += 1.0;
        let d = v - self.mean;
        self.mean += d / self.n;
        self.m2 += d * (v - self.mean);
    }

    fn merge(self, o: Moments) -> Moments {
        if self.n == 0.0 {
            return o;
        }
        if o.n == 0.0 {
            return self;
        }
        let n = self.n + o.n;
        let d = o.mean - self.mean;
        Moments {
            n,
            mean: self.mean + d * o.n / n,
            m2: self.m2 + o.m2 + d * d * self.n * o.n / n,
        }
    }
}

/// Korobov multiplier near `n / golden ratio`, coprime with `n`.
fn korobov_multiplier(n: usize) -> u64 {
    fn gcd(a: u64, b: u64) -> u64 {
        if b == 0 {
            a
        } else {
            gcd(b, a % b)
        }
    }
    let n = n as u64;
    if n <= 2 {
        return 1;
    }
    let mut a = ((n as f64) * 0.618_033_988_749_895).round() as u64;
    while gcd(a, n) != 1 {
        a += 1;
    }
    a
}

/// Average of `f(z)` over standard normal vectors `z` of length `dim`.
/// Results depend only on the configuration, not on thread scheduling.
pub(crate) fn mc_mean<F>(dim: usize, mc: &MCConfig, f: F) -> Result<McEstimate>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    mc.validate()?;
    match mc.sampling {
        Sampling::Pseudo => {
            let chunks = mc.paths.div_ceil(CHUNK);
            let parts: Vec<Moments> = (0..chunks)
                .into_par_iter()
                .map(|c| {
                    let mut rng = keyed_stream(mc.seed, c as u64);
                    let count = CHUNK.min(mc.paths - c * CHUNK);
                    let mut z = vec![0.0; dim];
                    let mut m = Moments::default();
                    for _ in 0..count {
                        for v in z.iter_mut() {
                            *v = rng.sample(StandardNormal);
                        }
                        m.push(f(&z));
                    }
                    m
                })
                .collect();
            let m = parts.into_iter().fold(Moments::default(), Moments::merge);
            let var = if m.n > 1.0 { m.m2 / (m.n - 1.0) } else { 0.0 };
            let est = McEstimate {
                estimate: m.mean,
                se: (var / m.n).sqrt(),
                paths: mc.paths,
            };
            check_finite(est)
        }
        Sampling::Lattice { shifts } => {
            let n = mc.paths / shifts;
            let a = korobov_multiplier(n);
            let gen: Vec<u64> = (0..dim)
                .scan(1u64, |g, _| {
                    let out = *g;
                    *g = ((*g as u128 * a as u128) % n as u128) as u64;
                    Some(out)
                })
                .collect();
            let normal = Normal::new(0.0, 1.0).expect("valid");
            let means: Vec<f64> = (0..shifts)
                .into_par_iter()
                .map(|s| {
                    let mut rng = keyed_stream(mc.seed, LATTICE_STREAM + s as u64);
                    let shift: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
                    let mut z = vec![0.0; dim];
                    let mut m = Moments::default();
                    for i in 0..n {
                        for j in 0..dim {
                            let frac = ((i as u128 * gen[j] as u128) % n as u128) as f64 / n as f64;
                            let u = (frac + shift[j]).fract().clamp(1e-16, 1.0 - 1e-16);
                            z[j] = normal.inverse_cdf(u);
                        }
                        m.push(f(&z));
                    }
                    m.mean
                })
                .collect();
            let mut m = Moments::default();
            for v in &means {
                m.push(*v);
            }
            let var = m.m2 / (m.n - 1.0);
            check_finite(McEstimate {
                estimate: m.mean,
                se: (var / m.n).sqrt(),
                paths: n * shifts,
            })
        }
    }
}

fn check_finite(e: McEstimate) -> Result<McEstimate> {
    if e.estimate.is_finite() && e.se.is_finite() {
        Ok(e)
    } else {
        Err(Error::Domain(format!(
            "Monte Carlo average is not finite ({}); the hazard overflows on simulated paths",
            e.estimate
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pseudo_mean_of_square() {
        let mc = MCConfig { paths: 20_000, seed: 3, ..Default::default() };
        let e = mc_mean(2, &mc, |z| z[0] * z[0] + z[1]).unwrap();
        assert!((e.estimate - 1.0).abs() < 4.0 * e.se);
        let again = mc_mean(2, &mc, |z| z[0] * z[0] + z[1]).unwrap();
        assert_eq!(e, again);
    }

    #[test]
    fn lattice_mean_of_square() {
        let mc = MCConfig {
            paths: 16_000,
            seed: 1,
            sampling: Sampling::Lattice { shifts: 16 },
            ..Default::default()
        };
        let e = mc_mean(3, &mc, |z| z[0] * z[0] + z[2]).unwrap();
        assert!((e.estimate - 1.0).abs() < 4.0 * e.se + 1e-3, "{e:?}");
    }

    #[test]
    fn trapezoid_of_constant_hazard() {
        let g = uniform_grid(0.0, 2.0, 10);
        let path = vec![5.0; 11];
        let link = HazardLink::LogLinear { a: 0.3f64.ln(), b: 0.0 };
        assert!((hazard_integral(&g, &path, &link, 10) - 0.6).abs() < 1e-15);
    }
}
