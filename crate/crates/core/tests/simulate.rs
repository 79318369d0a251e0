use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vitalsurv::revival::conditional_mean;
use vitalsurv::simulate::{
    detect_off_schedule, policy_log_density, simulate_fixed_dataset, simulate_sequential_dataset, AppointmentPolicy,
    FixedSchedule, ScheduleCheck, SchedulingPolicy, SequentialScheme,
};
use vitalsurv::{ModelParams, SurvivalFamily, Terminal};

fn normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    (-(x - mean).powi(2) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

#[test]
fn datasets_do_not_depend_on_size_or_thread_count() {
    let p = ModelParams::reference();
    let sched = FixedSchedule::regular(10.0, 0.5).unwrap();
    let small = simulate_fixed_dataset(10, &sched, &p, 42).unwrap();
    let large = simulate_fixed_dataset(25, &sched, &p, 42).unwrap();
    assert_eq!(small.records(), &large.records()[..10]);

    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let threaded = pool.install(|| simulate_fixed_dataset(25, &sched, &p, 42).unwrap());
    assert_eq!(threaded.records(), large.records());
    let other = simulate_fixed_dataset(25, &sched, &p, 43).unwrap();
    assert_ne!(other.records(), large.records());
}

#[test]
fn survival_draws_follow_the_family_cdf() {
    let n = 100_000;
    for fam in [
        SurvivalFamily::exponential(2.0).unwrap(),
        SurvivalFamily::weibull(1.5, 10.0).unwrap(),
        SurvivalFamily::gamma(0.6, 1.3).unwrap(),
    ] {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut xs: Vec<f64> = (0..n).map(|_| fam.sample(&mut rng)).collect();
        xs.sort_by(f64::total_cmp);
        let d = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = fam.cdf(x);
                (f - i as f64 / n as f64).abs().max((f - (i + 1) as f64 / n as f64).abs())
            })
            .fold(0.0, f64::max);
        // 0.1% critical value of the Kolmogorov distribution
        assert!(d * (n as f64).sqrt() < 1.95, "{fam:?}: D = {d}");
        let mean = xs.iter().sum::<f64>() / n as f64;
        let sd = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>().sqrt() / n as f64;
        assert!((mean - fam.mean()).abs() < 4.0 * sd, "{fam:?}: mean {mean}");
    }
}

#[test]
fn first_values_have_the_conditional_gaussian_law() {
    let p = ModelParams::reference();
    let sched = FixedSchedule::regular(40.0, 1.0).unwrap();
    let ds = simulate_fixed_dataset(5000, &sched, &p, 11).unwrap();
    let var: f64 = 1.0 + 2.0 + 0.25;
    let z: Vec<f64> = ds
        .records()
        .iter()
        .filter_map(|r| {
            let Terminal::Death(t) = r.terminal else { return None };
            let y = r.values.first()?.as_real()?;
            Some((y - conditional_mean(0.0, t, r.arm(), &p.psi.mean).unwrap()) / var.sqrt())
        })
        .collect();
    let n = z.len() as f64;
    assert!(n > 4900.0);
    let m = z.iter().sum::<f64>() / n;
    let v = z.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    assert!(m.abs() < 4.0 / n.sqrt(), "mean {m}");
    assert!((v - 1.0).abs() < 4.0 * (2.0 / n).sqrt(), "variance {v}");
}

#[test]
fn survivors_past_the_horizon_are_censored() {
    let p = ModelParams::reference();
    let sched = FixedSchedule::regular(4.0, 1.0).unwrap();
    let n = 20_000;
    let ds = simulate_fixed_dataset(n, &sched, &p, 2).unwrap();
    let s = p.lambda.survivor(4.0).unwrap();
    let censored = ds.censored_index().len() as f64;
    let se = (n as f64 * s * (1.0 - s)).sqrt();
    assert!((censored - n as f64 * s).abs() < 4.0 * se, "{censored} censored, expected {}", n as f64 * s);
    for r in ds.records() {
        match r.terminal {
            Terminal::Censored(c) => {
                assert_eq!(c, 4.0);
                assert_eq!(r.times, sched.times);
            }
            Terminal::Death(t) => assert!(t <= 4.0 && r.times.iter().all(|&s| s < t)),
            Terminal::Interval { .. } => unreachable!(),
        }
    }
}

#[test]
fn constant_gap_policy_reproduces_the_fixed_schedule() {
    let p = ModelParams::reference();
    let scheme = SequentialScheme { horizon: 6.0, policy: AppointmentPolicy::ConstantGap { gap: 1.5 } };
    let seq = simulate_sequential_dataset(200, &scheme, &p, 3).unwrap();
    let grid = FixedSchedule::regular(6.0, 1.5).unwrap().times;
    for r in seq.records() {
        assert!(r.is_valid());
        let t = r.terminal.time();
        let expected: Vec<f64> = grid.iter().copied().filter(|&s| s < t || r.terminal.is_censored()).collect();
        assert_eq!(r.times, expected, "{}", r.patient_id);
        assert_eq!(policy_log_density(r, &scheme.policy).unwrap(), 0.0);
        assert_eq!(detect_off_schedule(r, 1e-9), ScheduleCheck::Checked(vec![]));
    }
}

#[test]
fn value_free_policy_times_ignore_the_health_parameters() {
    let a = ModelParams::reference();
    let mut b = a.clone();
    b.psi.mean.alpha = vec![-0.4];
    b.psi.mean.curve.coefs = vec![5.0, 1.0];
    b.psi.covariance.sigma_e2 = 3.0;
    let scheme = SequentialScheme {
        horizon: 15.0,
        policy: AppointmentPolicy::ShiftedExponential { min_gap: 0.25, rate: 1.0 },
    };
    let da = simulate_sequential_dataset(2000, &scheme, &a, 8).unwrap();
    let db = simulate_sequential_dataset(2000, &scheme, &b, 8).unwrap();
    let mut differing_values = 0;
    for (ra, rb) in da.records().iter().zip(db.records()) {
        assert_eq!(ra.times, rb.times);
        assert_eq!(ra.terminal, rb.terminal);
        differing_values += usize::from(ra.values != rb.values);
    }
    assert!(differing_values > 1900);
}

#[test]
fn value_dependent_policy_couples_visit_rate_and_health() {
    let p = ModelParams::reference();
    let scheme = SequentialScheme {
        horizon: 15.0,
        policy: AppointmentPolicy::ValueDependent { min_gap: 0.1, base_rate: 0.5, slope: 1.5 },
    };
    let ds = simulate_sequential_dataset(3000, &scheme, &p, 21).unwrap();
    let pairs: Vec<(f64, f64)> = ds
        .records()
        .iter()
        .filter(|r| r.terminal.time() > 1.0)
        .map(|r| {
            let (_, y) = r.real_prefix();
            let mean = y.iter().sum::<f64>() / y.len() as f64;
            (r.times.len() as f64 / r.terminal.time(), mean)
        })
        .collect();
    let n = pairs.len() as f64;
    let (mx, my) = pairs.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0 / n, a.1 + p.1 / n));
    let cov: f64 = pairs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let vx: f64 = pairs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let vy: f64 = pairs.iter().map(|p| (p.1 - my).powi(2)).sum();
    let corr = cov / (vx * vy).sqrt();
    assert!(corr < -0.2, "correlation {corr}");
}

#[test]
fn one_visit_then_death_matches_its_density() {
    // pr(single visit, Y(0) in B): the joint density of death at t, the value
    // at 0 and no booking before t, integrated over t and B
    let p = ModelParams::reference();
    let (min_gap, base_rate, slope) = (0.5, 0.5, 0.5);
    let policy = AppointmentPolicy::ValueDependent { min_gap, base_rate, slope };
    let scheme = SequentialScheme { horizon: 200.0, policy };
    let n = 40_000;
    let ds = simulate_sequential_dataset(n, &scheme, &p, 17).unwrap();
    let var = 1.0 + 2.0 + 0.25;

    let no_booking = |t: f64, y: f64| {
        if t <= min_gap {
            1.0
        } else {
            (-base_rate * (-slope * y).exp() * (t - min_gap)).exp()
        }
    };
    for (lo, hi) in [(-2.0, 1.0), (1.0, 3.0), (3.0, 6.0)] {
        let (nt, ny) = (8000, 150);
        let (ht, hy) = (80.0 / nt as f64, (hi - lo) / ny as f64);
        let mut oracle = 0.0;
        for i in 0..nt {
            let t = (i as f64 + 0.5) * ht;
            let f = p.lambda.density(t).unwrap();
            let mean = conditional_mean(0.0, t, 0, &p.psi.mean).unwrap();
            for k in 0..ny {
                let y = lo + (k as f64 + 0.5) * hy;
                oracle += f * normal_pdf(y, mean, var) * no_booking(t, y);
            }
        }
        oracle *= ht * hy;
        let hits = ds
            .records()
            .iter()
            .filter(|r| {
                matches!(r.terminal, Terminal::Death(_))
                    && r.times.len() == 1
                    && r.values[0].as_real().is_some_and(|y| y >= lo && y < hi)
            })
            .count() as f64
            / n as f64;
        let se = (oracle * (1.0 - oracle) / n as f64).sqrt();
        assert!((hits - oracle).abs() < 4.0 * se, "bin [{lo}, {hi}): {hits} vs {oracle} (se {se})");
    }
}

#[test]
fn policy_density_and_breach_detection() {
    let p = ModelParams::reference();
    let policy = AppointmentPolicy::ValueDependent { min_gap: 0.2, base_rate: 1.0, slope: -0.3 };
    let scheme = SequentialScheme { horizon: 10.0, policy };
    let ds = simulate_sequential_dataset(50, &scheme, &p, 4).unwrap();
    let r = ds.records().iter().max_by_key(|r| r.times.len()).unwrap().clone();
    assert!(r.times.len() >= 3);

    let booked = r.scheduled_next.clone().unwrap();
    let mut manual = 0.0;
    for j in 0..r.times.len() {
        let y = r.values[j].as_real().unwrap();
        let next = r.times.get(j + 1).copied().unwrap_or(booked[j]);
        let rate = (0.3 * y).exp();
        manual += rate.ln() - rate * (next - r.times[j] - 0.2);
    }
    let got = policy_log_density(&r, &policy).unwrap();
    assert!((got - manual).abs() < 1e-10 * manual.abs().max(1.0));
    assert_eq!(detect_off_schedule(&r, 0.0), ScheduleCheck::Checked(vec![]));

    let mut late = r.clone();
    late.times[2] += 0.05;
    let ScheduleCheck::Checked(breaches) = detect_off_schedule(&late, 0.01) else { panic!() };
    assert_eq!(breaches.len(), 1);
    assert_eq!(breaches[0].index, 2);
    assert_eq!(breaches[0].scheduled, r.times[2]);
    assert_eq!(detect_off_schedule(&late, 0.1), ScheduleCheck::Checked(vec![]));
    // an appointment earlier than the minimum gap has zero policy density
    let mut early = r.clone();
    early.times[1] = early.times[0] + 0.1;
    assert_eq!(policy_log_density(&early, &policy).unwrap(), f64::NEG_INFINITY);

    let fixed = simulate_fixed_dataset(1, &FixedSchedule::regular(5.0, 1.0).unwrap(), &p, 1).unwrap();
    assert_eq!(detect_off_schedule(&fixed.records()[0], 0.0), ScheduleCheck::NotApplicable);
    assert!(policy.ln_density(1.0, 0.0, 0.0).is_finite());
}
