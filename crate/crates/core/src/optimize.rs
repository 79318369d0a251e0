//! Unconstrained minimisers: Nelder-Mead simplex and BFGS with central
//! finite-difference gradients, plus numerical Hessians.

use nalgebra::DMatrix;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimOptions {
    pub max_iterations: usize,
    /// Simplex stopping rule on objective spread, relative to `1 + |f|`.
    pub f_tol: f64,
    /// Simplex stopping rule on vertex spread, relative to `1 + |x|`.
    pub x_tol: f64,
    /// Gradient stopping rule: `max_i |g_i| (1 + |x_i|) <= grad_tol (1 + |f|)`.
    pub grad_tol: f64,
    pub initial_step: f64,
    /// Relative step of the finite-difference gradient.
    pub fd_step: f64,
    /// Largest coordinate change of one quasi-Newton step.
    pub max_step: f64,
    /// Dimension above which quasi-Newton replaces the simplex.
    pub simplex_max_dim: usize,
}

impl Default for OptimOptions {
    fn default() -> Self {
        OptimOptions {
            max_iterations: 2000,
            f_tol: 1e-11,
            x_tol: 1e-7,
            grad_tol: 1e-6,
            initial_step: 0.1,
            fd_step: 1e-5,
            max_step: 2.0,
            simplex_max_dim: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    /// Best objective value after each iteration.
    pub trace: Vec<f64>,
}

struct Counted<F> {
    f: F,
    n: usize,
}

impl<F: FnMut(&[f64]) -> f64> Counted<F> {
    fn eval(&mut self, x: &[f64]) -> f64 {
        self.n += 1;
        let v = (self.f)(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    }
}

fn fd_step(x: f64, rel: f64) -> f64 {
    rel * x.abs().max(1.0)
}

/// Central finite-difference gradient.
pub fn fd_gradient<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], rel_step: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = fd_step(x[i], rel_step);
            xp[i] = x[i] + h;
            let fp = f(&xp);
            xp[i] = x[i] - h;
            let fm = f(&xp);
            xp[i] = x[i];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// Central finite-difference Hessian.
pub fn fd_hessian<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], rel_step: f64) -> DMatrix<f64> {
    let n = x.len();
    let h: Vec<f64> = x.iter().map(|&v| fd_step(v, rel_step)).collect();
    let f0 = f(x);
    let mut out = DMatrix::zeros(n, n);
    let mut xp = x.to_vec();
    for i in 0..n {
        xp[i] = x[i] + h[i];
        let fp = f(&xp);
        xp[i] = x[i] - h[i];
        let fm = f(&xp);
        xp[i] = x[i];
        out[(i, i)] = (fp - 2.0 * f0 + fm) / (h[i] * h[i]);
        for j in 0..i {
            let mut corner = |si: f64, sj: f64| {
                xp[i] = x[i] + si * h[i];
                xp[j] = x[j] + sj * h[j];
                let v = f(&xp);
                xp[i] = x[i];
                xp[j] = x[j];
                v
            };
            let v = (corner(1.0, 1.0) - corner(1.0, -1.0) - corner(-1.0, 1.0) + corner(-1.0, -1.0))
                / (4.0 * h[i] * h[j]);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

/// Central-difference gradient together with the diagonal second
/// differences, which come from the same evaluations.
fn gradient_and_curvature<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], fx: f64, rel_step: f64) -> (Vec<f64>, Vec<f64>) {
    let mut xp = x.to_vec();
    let mut g = Vec::with_capacity(x.len());
    let mut d = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let h = fd_step(x[i], rel_step);
        xp[i] = x[i] + h;
        let fp = f(&xp);
        xp[i] = x[i] - h;
        let fm = f(&xp);
        xp[i] = x[i];
        g.push((fp - fm) / (2.0 * h));
        d.push((fp - 2.0 * fx + fm) / (h * h));
    }
    (g, d)
}

/// Inverse of the positive diagonal curvatures, or the identity when the
/// curvature is unusable.
fn diagonal_start(curv: &[f64]) -> DMatrix<f64> {
    let n = curv.len();
    if curv.iter().all(|c| c.is_finite() && *c > 0.0) {
        DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(n, curv.iter().map(|c| 1.0 / c)))
    } else {
        DMatrix::identity(n, n)
    }
}

fn gradient_small(g: &[f64], x: &[f64], f: f64, tol: f64) -> bool {
    let scale = tol * (1.0 + f.abs());
    g.iter().zip(x).all(|(gi, xi)| gi.abs() * (1.0 + xi.abs()) <= scale)
}

/// Nelder-Mead simplex minimisation.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(f: F, x0: &[f64], opts: &OptimOptions) -> OptimResult {
    let mut cf = Counted { f, n: 0 };
    let n = x0.len();
    if n == 0 {
        let v = cf.eval(x0);
        return OptimResult { x: vec![], f: v, iterations: 0, evaluations: 1, converged: true, trace: vec![v] };
    }
    let mut simplex: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += opts.initial_step * x0[i].abs().max(1.0);
        simplex.push(v);
    }
    let mut fv: Vec<f64> = simplex.iter().map(|v| cf.eval(v)).collect();
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iter = 0;
    let mut order: Vec<usize> = (0..=n).collect();
    while iter < opts.max_iterations {
        order.sort_by(|&a, &b| fv[a].total_cmp(&fv[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        fv = order.iter().map(|&i| fv[i]).collect();
        order = (0..=n).collect();
        trace.push(fv[0]);
        let f_spread = (fv[n] - fv[0]).abs();
        let x_spread = (1..=n)
            .flat_map(|j| (0..n).map(move |i| (j, i)))
            .map(|(j, i)| (simplex[j][i] - simplex[0][i]).abs() / (1.0 + simplex[0][i].abs()))
            .fold(0.0, f64::max);
        if f_spread <= opts.f_tol * (1.0 + fv[0].abs()) && x_spread <= opts.x_tol {
            converged = true;
            break;
        }
        if fv[0].is_finite() && f_spread <= 1e-15 * (1.0 + fv[0].abs()) && x_spread <= 1e3 * opts.x_tol {
            converged = true;
            break;
        }
        iter += 1;
        let mut centroid = vec![0.0; n];
        for v in &simplex[..n] {
            for i in 0..n {
                centroid[i] += v[i] / n as f64;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            (0..n).map(|i| centroid[i] + t * (simplex[n][i] - centroid[i])).collect()
        };
        let xr = along(-1.0);
        let fr = cf.eval(&xr);
        if fr < fv[0] {
            let xe = along(-2.0);
            let fe = cf.eval(&xe);
            if fe < fr {
                simplex[n] = xe;
                fv[n] = fe;
            } else {
                simplex[n] = xr;
                fv[n] = fr;
            }
            continue;
        }
        if fr < fv[n - 1] {
            simplex[n] = xr;
            fv[n] = fr;
            continue;
        }
        let (xc, fc) = if fr < fv[n] {
            let xc = along(-0.5);
            let fc = cf.eval(&xc);
            (xc, fc)
        } else {
            let xc = along(0.5);
            let fc = cf.eval(&xc);
            (xc, fc)
        };
        if fc < fv[n].min(fr) {
            simplex[n] = xc;
            fv[n] = fc;
            continue;
        }
        // shrink towards the best vertex
        for j in 1..=n {
            for i in 0..n {
                simplex[j][i] = simplex[0][i] + 0.5 * (simplex[j][i] - simplex[0][i]);
            }
            fv[j] = cf.eval(&simplex[j]);
        }
    }
    let best = (0..=n).min_by(|&a, &b| fv[a].total_cmp(&fv[b])).unwrap_or(0);
    OptimResult {
        x: simplex[best].clone(),
        f: fv[best],
        iterations: iter,
        evaluations: cf.n,
        converged,
        trace,
    }
}

/// BFGS on the inverse Hessian with central-difference gradients and
/// backtracking Armijo line search.
pub fn bfgs<F: FnMut(&[f64]) -> f64>(f: F, x0: &[f64], opts: &OptimOptions) -> OptimResult {
    let mut cf = Counted { f, n: 0 };
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut fx = cf.eval(&x);
    let (mut g, curv) = gradient_and_curvature(|v| cf.eval(v), &x, fx, opts.fd_step);
    let h0 = diagonal_start(&curv);
    let mut h = h0.clone();
    let mut fresh = h0 == DMatrix::identity(n, n);
    let mut trace = vec![fx];
    let mut converged = false;
    let mut iter = 0;
    let mut stalls = 0;
    while iter < opts.max_iterations {
        if !fx.is_finite() {
            break;
        }
        if gradient_small(&g, &x, fx, opts.grad_tol) {
            converged = true;
            break;
        }
        iter += 1;
        let mut p: Vec<f64> = (0..n).map(|i| -(0..n).map(|j| h[(i, j)] * g[j]).sum::<f64>()).collect();
        let mut slope: f64 = p.iter().zip(&g).map(|(a, b)| a * b).sum();
        if !(slope < 0.0) {
            h = DMatrix::identity(n, n);
            fresh = true;
            p = g.iter().map(|v| -v).collect();
            slope = -g.iter().map(|v| v * v).sum::<f64>();
        }
        let pmax = p.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut step = if pmax > opts.max_step { opts.max_step / pmax } else { 1.0 };
        if fresh {
            // unscaled gradient step: keep it modest
            step = step.min(opts.initial_step / pmax.max(1e-300));
        }
        let mut accepted = None;
        for _ in 0..50 {
            let xn: Vec<f64> = x.iter().zip(&p).map(|(a, b)| a + step * b).collect();
            let fnew = cf.eval(&xn);
            if fnew <= fx + 1e-4 * step * slope {
                accepted = Some((xn, fnew));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fnew)) = accepted else {
            if fresh {
                // cannot decrease along the gradient: numerical floor
                converged = gradient_small(&g, &x, fx, opts.grad_tol * 1e3);
                break;
            }
            h = DMatrix::identity(n, n);
            fresh = true;
            continue;
        };
        let gn = fd_gradient(|v| cf.eval(v), &xn, opts.fd_step);
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        if sy > 1e-12 * s.iter().map(|v| v * v).sum::<f64>().sqrt() * y.iter().map(|v| v * v).sum::<f64>().sqrt() {
            if fresh {
                let yy: f64 = y.iter().map(|v| v * v).sum();
                h = DMatrix::identity(n, n) * (sy / yy);
                fresh = false;
            }
            let rho = 1.0 / sy;
            let hy: Vec<f64> = (0..n).map(|i| (0..n).map(|j| h[(i, j)] * y[j]).sum()).collect();
            let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
            for i in 0..n {
                for j in 0..n {
                    h[(i, j)] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
                }
            }
        }
        let decrease = fx - fnew;
        x = xn;
        fx = fnew;
        g = gn;
        trace.push(fx);
        if decrease <= 1e-14 * (1.0 + fx.abs()) {
            stalls += 1;
            if stalls >= 3 {
                converged = gradient_small(&g, &x, fx, opts.grad_tol * 1e3);
                break;
            }
        } else {
            stalls = 0;
        }
    }
    OptimResult {
        x,
        f: fx,
        iterations: iter,
        evaluations: cf.n,
        converged,
        trace,
    }
}

/// Minimises `f` from `x0`.
///
/// A start point that already satisfies the gradient rule returns after zero
/// iterations. Low-dimensional problems use the simplex followed by a
/// quasi-Newton polish; larger ones go straight to quasi-Newton.
pub fn minimize<F: FnMut(&[f64]) -> f64>(mut f: F, x0: &[f64], opts: &OptimOptions) -> OptimResult {
    let f0 = f(x0);
    let g0 = fd_gradient(&mut f, x0, opts.fd_step);
    let pre_evals = 1 + 2 * x0.len();
    if f0.is_finite() && gradient_small(&g0, x0, f0, opts.grad_tol) {
        return OptimResult {
            x: x0.to_vec(),
            f: f0,
            iterations: 0,
            evaluations: pre_evals,
            converged: true,
            trace: vec![f0],
        };
    }
    if x0.len() <= opts.simplex_max_dim {
        let nm = nelder_mead(&mut f, x0, opts);
        let mut polish = bfgs(&mut f, &nm.x, opts);
        polish.iterations += nm.iterations;
        polish.evaluations += nm.evaluations + pre_evals;
        let mut trace = nm.trace;
        trace.extend(polish.trace);
        polish.trace = trace;
        if polish.f > nm.f {
            polish.x = nm.x;
            polish.f = nm.f;
            polish.converged = nm.converged;
        }
        polish
    } else {
        let mut r = bfgs(&mut f, x0, opts);
        r.evaluations += pre_evals;
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> f64 {
        (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)
    }

    fn quadratic(x: &[f64]) -> f64 {
        x.iter().enumerate().map(|(i, v)| (i as f64 + 1.0) * (v - 0.5 * i as f64).powi(2)).sum()
    }

    #[test]
    fn simplex_rosenbrock() {
        let r = nelder_mead(rosenbrock, &[-1.2, 1.0], &OptimOptions::default());
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-5 && (r.x[1] - 1.0).abs() < 1e-5, "{:?}", r.x);
    }

    #[test]
    fn bfgs_rosenbrock_and_quadratic() {
        let r = bfgs(rosenbrock, &[-1.2, 1.0], &OptimOptions::default());
        assert!(r.converged, "{r:?}");
        assert!((r.x[0] - 1.0).abs() < 1e-5);
        let r = bfgs(quadratic, &[3.0; 12], &OptimOptions::default());
        assert!(r.converged);
        for (i, v) in r.x.iter().enumerate() {
            assert!((v - 0.5 * i as f64).abs() < 1e-6);
        }
    }

    #[test]
    fn restart_at_optimum_is_immediate() {
        let opts = OptimOptions::default();
        let r = minimize(quadratic, &[5.0, -2.0, 1.0], &opts);
        let again = minimize(quadratic, &r.x, &opts);
        assert!(again.iterations <= 2);
        assert!(again.converged);
    }

    #[test]
    fn hessian_of_quadratic() {
        let h = fd_hessian(quadratic, &[0.3, 0.1, 2.0], 1e-4);
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 2.0 * (i as f64 + 1.0) } else { 0.0 };
                assert!((h[(i, j)] - expect).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn nan_objective_is_rejected() {
        let f = |x: &[f64]| if x[0] < 0.0 { f64::NAN } else { (x[0] - 1.0).powi(2) };
        let r = nelder_mead(f, &[0.05], &OptimOptions::default());
        assert!((r.x[0] - 1.0).abs() < 1e-5);
    }
}
