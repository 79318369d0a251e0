use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;
use vitalsurv::exogenous::finite::library;
use vitalsurv::exogenous::{HazardLink, LatentJointModel, ProbeModel};
use vitalsurv::likelihood::FitResult;
use vitalsurv::{ModelParams, TemporalKernel};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_vitalsurv"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write(dir: &Path, name: &str, contents: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, contents).unwrap();
    p
}

fn write_json<T: serde::Serialize>(dir: &Path, name: &str, v: &T) -> PathBuf {
    write(dir, name, &serde_json::to_string_pretty(v).unwrap())
}

fn stderr_json(o: &Output) -> Value {
    let text = String::from_utf8_lossy(&o.stderr);
    let line = text.lines().last().unwrap_or_default();
    serde_json::from_str(line).unwrap_or_else(|_| panic!("stderr is not JSON: {text}"))
}

struct Setup {
    dir: TempDir,
    model: PathBuf,
    scheme: PathBuf,
}

fn setup() -> Setup {
    let dir = TempDir::new().unwrap();
    let model = write_json(dir.path(), "model.json", &ModelParams::reference());
    let scheme = write(dir.path(), "scheme.json", r#"{"type": "fixed", "horizon": 12, "gap": 1.0}"#);
    Setup { dir, model, scheme }
}

fn simulate(st: &Setup, out: &str, extra: &[&str]) -> Output {
    let out = st.dir.path().join(out);
    let mut args = vec!["simulate", "--model", s(&st.model), "--scheme", s(&st.scheme), "--out", s(&out)];
    args.extend_from_slice(extra);
    run(&args)
}

#[test]
fn simulate_is_byte_reproducible() {
    let st = setup();
    for out in ["a", "b"] {
        let o = simulate(&st, out, &["--seed", "7", "--patients", "40"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["data.csv", "events.csv"] {
        let a = std::fs::read(st.dir.path().join("a").join(f)).unwrap();
        let b = std::fs::read(st.dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs");
    }
}

#[test]
fn sequential_scheme_writes_bookings() {
    let st = setup();
    let scheme = write(
        st.dir.path(),
        "seq.json",
        r#"{"type": "sequential", "horizon": 6, "policy": {"type": "value_dependent", "min_gap": 0.25, "base_rate": 1.5, "slope": 0.3}}"#,
    );
    let out = st.dir.path().join("seq");
    let o = run(&[
        "simulate", "--model", s(&st.model), "--scheme", s(&scheme), "--seed", "3", "--patients", "10", "--out", s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let sched = std::fs::read_to_string(out.join("schedule.csv")).unwrap();
    assert!(sched.starts_with("patient_id,time,scheduled_next"));
    assert!(sched.lines().count() > 10);
}

#[test]
fn missing_seed_is_a_config_error() {
    let st = setup();
    let o = simulate(&st, "x", &[]);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr_json(&o);
    assert_eq!(e["kind"], "config");
    assert_eq!(e["exit_code"], 2);
}

#[test]
fn outputs_are_not_overwritten_without_force() {
    let st = setup();
    assert!(simulate(&st, "o", &["--seed", "1", "--patients", "5"]).status.success());
    let again = simulate(&st, "o", &["--seed", "2", "--patients", "5"]);
    assert_eq!(again.status.code(), Some(2));
    assert!(simulate(&st, "o", &["--seed", "2", "--patients", "5", "--force"]).status.success());
}

#[test]
fn config_file_supplies_flags_and_flags_win() {
    let st = setup();
    let out = st.dir.path().join("cfg");
    let cfg = serde_json::json!({
        "model": st.model, "scheme": st.scheme, "seed": 5, "patients": 8, "out": out,
    });
    let cfg = write_json(st.dir.path(), "run.json", &cfg);
    let o = run(&["simulate", "--config", s(&cfg)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let events = std::fs::read_to_string(out.join("events.csv")).unwrap();
    assert_eq!(events.lines().count(), 9);
    let o = run(&["simulate", "--config", s(&cfg), "--patients", "3", "--force"]);
    assert!(o.status.success());
    let events = std::fs::read_to_string(out.join("events.csv")).unwrap();
    assert_eq!(events.lines().count(), 4);
}

#[test]
fn fit_then_diagnose_round_trips() {
    let st = setup();
    let o = simulate(&st, "sim", &["--seed", "11", "--patients", "80"]);
    assert!(o.status.success());
    let sim = st.dir.path().join("sim");
    let (data, events) = (sim.join("data.csv"), sim.join("events.csv"));
    let fit_dir = st.dir.path().join("fit");
    let o = run(&[
        "fit", "--model", s(&st.model), "--data", s(&data), "--events", s(&events), "--out", s(&fit_dir), "--workers", "1",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let fit_text = std::fs::read_to_string(fit_dir.join("fit.json")).unwrap();
    let fit: FitResult = serde_json::from_str(&fit_text).unwrap();
    assert!((fit.four_factors.total() - fit.loglik).abs() < 1e-8);
    let compat = std::fs::read_to_string(fit_dir.join("compatibility.csv")).unwrap();
    assert!(compat.starts_with("patient_id,censored,z"));

    let diag_dir = st.dir.path().join("diag");
    let fit_path = fit_dir.join("fit.json");
    let o = run(&[
        "diagnose", "--model", s(&fit_path), "--data", s(&data), "--events", s(&events), "--out", s(&diag_dir),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let diag: Value = serde_json::from_str(&std::fs::read_to_string(diag_dir.join("diagnosis.json")).unwrap()).unwrap();
    let original: Value = serde_json::from_str(&fit_text).unwrap();
    assert_eq!(diag["fit"], original);
    assert!((diag["loglik"].as_f64().unwrap() - fit.loglik).abs() < 1e-8);
}

#[test]
fn predict_with_empty_history_is_the_prior() {
    let st = setup();
    let out = st.dir.path().join("pred");
    let o = run(&["predict", "--model", s(&st.model), "--grid", "0.5:20:5", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let prior = ModelParams::reference().lambda;
    let csv = std::fs::read_to_string(out.join("predictive.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t,density,survivor"));
    for line in lines {
        let v: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        assert!((v[1] - prior.density(v[0]).unwrap()).abs() < 1e-12 * (1.0 + v[1]));
        assert!((v[2] - prior.survivor(v[0]).unwrap()).abs() < 1e-8);
    }
}

#[test]
fn predict_conditions_on_one_patient() {
    let st = setup();
    let data = write(st.dir.path(), "h.csv", "patient_id,time,value\nq,0,0.2\nq,1,1.9\nr,0,0.0\n");
    let out = st.dir.path().join("p");
    let o = run(&["predict", "--model", s(&st.model), "--data", s(&data), "--patient", "q", "--arm", "1", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("predictive.csv")).unwrap();
    let first: Vec<f64> = csv.lines().nth(1).unwrap().split(',').map(|x| x.parse().unwrap()).collect();
    assert_eq!(first[0], 1.0);
    assert_eq!(first[2], 1.0);
    // several patients without a choice is ambiguous
    let o = run(&["predict", "--model", s(&st.model), "--data", s(&data), "--out", s(&out), "--force"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn malformed_data_is_a_data_error() {
    let st = setup();
    let data = write(st.dir.path(), "d.csv", "patient_id,time,value\na,0,1.0\na,2,0.5\na,1,0.1\n");
    let events = write(st.dir.path(), "e.csv", "patient_id,terminal_time,status,arm\na,5,1,0\n");
    let out = st.dir.path().join("bad");
    let o = run(&["diagnose", "--model", s(&st.model), "--data", s(&data), "--events", s(&events), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(stderr_json(&o)["kind"], "data");
}

#[test]
fn malformed_model_is_a_config_error() {
    let st = setup();
    let model = write(st.dir.path(), "m.json", r#"{"lambda": {"family": "weibull", "params": [-1, 2]}}"#);
    let out = st.dir.path().join("m");
    let o = run(&["predict", "--model", s(&model), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn exogeneity_probe_flags_the_latent_model() {
    let st = setup();
    let model = ProbeModel::Latent(LatentJointModel {
        kernel: TemporalKernel::Exponential { variance: 1.0, range: 2.0 },
        noise_var: 1.0,
        link: HazardLink::LogLinear { a: 0.3f64.ln(), b: 1.0 },
    });
    let model = write_json(st.dir.path(), "latent.json", &model);
    let probe = write(
        st.dir.path(),
        "probe.json",
        r#"{"times": [0.5, 1.0, 2.0], "values": [0.0, 0.3, -0.2], "t": 1.5, "index": 2, "delta": 1.0,
            "mc": {"grid_intervals": 50}}"#,
    );
    let out = st.dir.path().join("exo");
    let o = run(&[
        "check-exogeneity", "--model", s(&model), "--probe", s(&probe), "--seed", "1", "--mc-paths", "4000", "--out", s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r: Value = serde_json::from_str(&std::fs::read_to_string(out.join("exogeneity.json")).unwrap()).unwrap();
    assert_eq!(r["verdict"], "not_exogenous");
    assert_eq!(r["mc"]["paths"], 4000);

    // a probe index before the probe time is a numerical domain error
    let bad = write(
        st.dir.path(),
        "bad.json",
        r#"{"times": [0.5, 1.0, 2.0], "values": [0.0, 0.3, -0.2], "t": 1.5, "index": 0, "delta": 1.0}"#,
    );
    let o = run(&["check-exogeneity", "--model", s(&model), "--probe", s(&bad), "--seed", "1", "--out", s(&out), "--force"]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn finite_checkers() {
    let st = setup();
    let spec = write_json(st.dir.path(), "v.json", &library::constant_process());
    let out = st.dir.path().join("v");
    let o = run(&["check-vitality", "--spec", s(&spec), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_str(&String::from_utf8_lossy(&o.stdout)).unwrap();
    assert_eq!(v["verdict"], "non_vital");

    let spec = write_json(st.dir.path(), "e.json", &library::coupled_start());
    let o = run(&["check-evolution", "--spec", s(&spec), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(out.join("evolution.json")).unwrap()).unwrap();
    assert_eq!(v["x_evolves_independently"]["verdict"], "holds");
    assert_eq!(v["y_evolves_independently"]["verdict"], "holds");
    assert_eq!(v["processes_independent"], false);
    assert_eq!(v["conditionally_independent_given_initial"], true);
}
