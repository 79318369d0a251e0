use vitalsurv::density::{
    clinical_predictive, interval_censored_mass, interval_mass, joint_density, marginal_density, tail_mass,
    GridDensity,
};
use vitalsurv::{ModelParams, QuadratureConfig, StateValue, SurvivalFamily};

fn qc() -> QuadratureConfig {
    QuadratureConfig::default()
}

fn rel(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

/// Midpoint rule over a wide window.
fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    (0..n).map(|i| f(a + (i as f64 + 0.5) * h)).sum::<f64>() * h
}

#[test]
fn joint_density_is_consistent_under_marginalisation() {
    // integrating one measurement out of q(y, t) gives q on the smaller grid
    let params = ModelParams::reference();
    let ts = [0.0, 1.0, 2.0];
    let t = 4.0;
    let (y0, y2) = (0.4, 2.3);
    let full = |y1: f64| joint_density(&ts, &[y0, y1, y2], t, 1, &params).unwrap().value();
    let sd = (1.0f64 + 2.0 + 0.25).sqrt();
    let integral = integrate(full, -12.0 * sd, 12.0 * sd, 20_000);
    let reduced = joint_density(&[0.0, 2.0], &[y0, y2], t, 1, &params).unwrap().value();
    assert!(rel(integral, reduced) < 1e-8, "{integral} vs {reduced}");
}

#[test]
fn interval_masses_are_additive() {
    let params = ModelParams::reference();
    let ts = [0.0, 0.5, 1.5];
    let y = [0.2, 0.9, 1.7];
    let total = marginal_density(&ts, &y, 1, &params, &qc()).unwrap().value();
    let a = interval_mass(&ts, &y, 1.5, 4.0, 1, &params, &qc()).unwrap().value();
    let b = interval_mass(&ts, &y, 4.0, 9.0, 1, &params, &qc()).unwrap().value();
    let c = tail_mass(&ts, &y, 9.0, 1, &params, &qc()).unwrap().value();
    assert!(rel(a + b + c, total) < 1e-8);
    let open = interval_mass(&ts, &y, 4.0, f64::INFINITY, 1, &params, &qc()).unwrap().value();
    assert!(rel(open, b + c) < 1e-8);
}

#[test]
fn interval_censoring_without_values_is_a_survival_interval() {
    let params = ModelParams::reference();
    let vals = [StateValue::Flat, StateValue::Flat];
    let m = interval_censored_mass(&[2.0, 3.0], &vals, 0, &params, &qc()).unwrap().value();
    let s = |t: f64| params.lambda.survivor(t).unwrap();
    assert!(rel(m, s(0.0) - s(2.0)) < 1e-12);

    let vals = [StateValue::Real(0.3), StateValue::Real(1.1), StateValue::Flat];
    let ts = [0.0, 1.0, 2.5];
    let m = interval_censored_mass(&ts, &vals, 1, &params, &qc()).unwrap().value();
    let oracle = interval_mass(&ts[..2], &[0.3, 1.1], 1.0, 2.5, 1, &params, &qc()).unwrap().value();
    assert_eq!(m, oracle);
}

#[test]
fn t_free_mean_factorises_for_every_family() {
    let mut params = ModelParams::reference();
    params.psi.mean.alpha = vec![0.0];
    params.psi.mean.curve.coefs = vec![0.0, 0.0];
    let ts = [0.0, 0.7, 1.9];
    let y = [0.5, -0.3, 1.2];
    for fam in [
        SurvivalFamily::exponential(0.3).unwrap(),
        SurvivalFamily::weibull(0.7, 4.0).unwrap(),
        SurvivalFamily::gamma(2.5, 0.4).unwrap(),
    ] {
        params.lambda = fam;
        let got = marginal_density(&ts, &y, 0, &params, &qc()).unwrap().ln();
        let mut g = GridDensity::new(&ts, &y, 0, &params).unwrap();
        let exact = g.ln_gaussian(10.0) + fam.ln_survivor(1.9);
        assert!((got - exact).abs() < 1e-8, "{fam:?}: {got} vs {exact}");
    }
}

#[test]
fn long_grids_stay_finite_on_the_log_scale() {
    let params = ModelParams::reference();
    let ts: Vec<f64> = (0..50).map(|i| 0.2 * i as f64).collect();
    let y: Vec<f64> = ts.iter().map(|t| 3.0 - 0.1 * t).collect();
    let ln_p = marginal_density(&ts, &y, 1, &params, &qc()).unwrap().ln();
    assert!(ln_p.is_finite());
    assert!(ln_p < -30.0);
}

#[test]
fn clinical_predictive_is_a_survival_law_on_the_open_tail() {
    let params = ModelParams::reference();
    let ts = [0.0, 1.0, 2.0, 3.0];
    let y = [0.1, 1.2, 1.6, 2.9];
    let cp = clinical_predictive(&ts, &y, 0, &params, &qc()).unwrap();
    assert_eq!(cp.support_start(), 3.0);
    assert!((cp.survivor(3.0).unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(cp.density(2.5), 0.0);
    let med = cp.quantile(0.5).unwrap();
    assert!((cp.survivor(med).unwrap() - 0.5).abs() < 1e-7);
    let mut prev = 1.0;
    for i in 1..100 {
        let s = cp.survivor(3.0 + 0.2 * i as f64).unwrap();
        assert!(s <= prev + 1e-15);
        prev = s;
    }
    assert!(prev < 0.05);
}

#[test]
fn tighter_tolerance_agrees() {
    let params = ModelParams::reference();
    let ts = [0.0, 0.25, 0.5, 0.75];
    let y = [1.0, 1.4, 1.9, 2.2];
    let loose = QuadratureConfig { rel_tol: 1e-6, ..qc() };
    let tight = QuadratureConfig { rel_tol: 1e-12, abs_tol: 1e-300, ..qc() };
    let a = marginal_density(&ts, &y, 1, &params, &loose).unwrap().value();
    let b = marginal_density(&ts, &y, 1, &params, &tight).unwrap().value();
    assert!(rel(a, b) < 1e-6);
    let scaled = QuadratureConfig { tail_scale: Some(0.5), ..tight };
    let c = marginal_density(&ts, &y, 1, &params, &scaled).unwrap().value();
    assert!(rel(c, b) < 1e-10);
}
