use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vitalsurv::density::clinical_predictive;
use vitalsurv::exogenous::{
    conditionally_independent_given_initial, exogeneity_probe, independent_evolution_check, processes_independent,
    vitality_check, Component, EvolutionSpec, EvolutionVerdict, MCConfig, ProbeModel, ProbeReport, VitalitySpec,
    VitalityVerdict,
};
use vitalsurv::io::{
    fmt_f64, read_dataset_files, read_histories, read_json, write_events, write_json, write_measurements,
    write_schedule,
};
use vitalsurv::likelihood::{
    censored_compatibility, dataset_loglik, fit_joint, four_factor, staged_estimates, CompatibilityReport, FitOptions,
    FitResult, FourFactors,
};
use vitalsurv::simulate::{simulate_fixed_dataset, simulate_sequential_dataset, FixedSchedule, SequentialScheme};
use vitalsurv::{Dataset, ModelParams, QuadratureConfig, StateValue};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::Start;

const DEFAULT_PATIENTS: usize = 100;
const DEFAULT_GRID_POINTS: usize = 101;

fn config_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> CliResult<T> {
    read_json(path).map_err(|e| CliError::ConfigFile {
        context: format!("reading {what} {}", path.display()),
        source: e,
    })
}

/// Model parameters from either a parameter file or a fit result.
fn load_params(path: &Path) -> CliResult<(ModelParams, Option<FitResult>)> {
    let value: serde_json::Value = config_json(path, "model")?;
    let parsed = if value.get("params").is_some() && value.get("estimates").is_some() {
        serde_json::from_value::<FitResult>(value).map(|f| (f.params.clone(), Some(f)))
    } else {
        serde_json::from_value::<ModelParams>(value).map(|p| (p, None))
    };
    let (params, fit) = parsed.map_err(|e| CliError::ConfigFile {
        context: format!("parsing model {}", path.display()),
        source: e.into(),
    })?;
    params.validate().map_err(|e| CliError::ConfigFile {
        context: format!("model {}", path.display()),
        source: e,
    })?;
    Ok((params, fit))
}

fn load_dataset(cfg: &RunConfig, schedule: Option<&Path>) -> CliResult<Dataset> {
    let data = RunConfig::require(&cfg.data, "data")?;
    let events = RunConfig::require(&cfg.events, "events")?;
    read_dataset_files(data, events, schedule).map_err(|e| CliError::DataFile {
        context: format!("reading {} and {}", data.display(), events.display()),
        source: e,
    })
}

fn quadrature(cfg: &RunConfig) -> QuadratureConfig {
    let mut qc = QuadratureConfig::default();
    if let Some(t) = cfg.tol {
        qc.rel_tol = t;
    }
    qc
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Core(e.into()))
}

fn print_json<T: Serialize>(value: &T) -> CliResult<()> {
    let s = serde_json::to_string_pretty(value).map_err(|e| CliError::Core(e.into()))?;
    println!("{s}");
    Ok(())
}

#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
enum SchemeSpec {
    /// Explicit visit times, or a regular grid with spacing `gap`.
    Fixed {
        horizon: f64,
        #[serde(default)]
        times: Option<Vec<f64>>,
        #[serde(default)]
        gap: Option<f64>,
    },
    Sequential(SequentialScheme),
}

pub fn simulate(cfg: &RunConfig, scheme: Option<PathBuf>, patients: Option<usize>) -> CliResult<()> {
    let seed = cfg.seed()?;
    let (params, _) = load_params(RunConfig::require(&cfg.model, "model")?)?;
    let scheme_path = scheme.or(cfg.file.scheme.clone());
    let scheme: SchemeSpec = config_json(RunConfig::require(&scheme_path, "scheme")?, "scheme")?;
    let n = patients.or(cfg.file.patients).unwrap_or(DEFAULT_PATIENTS);
    let (ds, sequential) = match scheme {
        SchemeSpec::Fixed { horizon, times, gap } => {
            let sched = match (times, gap) {
                (Some(times), None) => FixedSchedule { horizon, times },
                (None, Some(gap)) => FixedSchedule::regular(horizon, gap)?,
                _ => return Err(CliError::Config("a fixed scheme needs exactly one of `times` and `gap`".into())),
            };
            sched.validate()?;
            (simulate_fixed_dataset(n, &sched, &params, seed)?, false)
        }
        SchemeSpec::Sequential(s) => (simulate_sequential_dataset(n, &s, &params, seed)?, true),
    };
    let mut names = vec!["data.csv", "events.csv"];
    if sequential {
        names.push("schedule.csv");
    }
    let paths = cfg.outputs(&names)?;
    write_measurements(ds.records(), create(&paths[0])?)?;
    write_events(ds.records(), create(&paths[1])?)?;
    if sequential {
        write_schedule(ds.records(), create(&paths[2])?)?;
    }
    println!(
        "simulated {} patients ({} deaths, {} censored) into {}",
        ds.len(),
        ds.n_deaths(),
        ds.censored_index().len(),
        paths[0].parent().unwrap_or(Path::new(".")).display()
    );
    Ok(())
}

fn write_compatibility(report: &CompatibilityReport, path: &Path) -> CliResult<()> {
    let mut w = create(path)?;
    let io = |e: std::io::Error| CliError::Core(e.into());
    writeln!(w, "patient_id,censored,z").map_err(io)?;
    for e in &report.entries {
        writeln!(w, "{},{},{}", e.patient_id, u8::from(e.censored), fmt_f64(e.z)).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn fit(cfg: &RunConfig, schedule: Option<PathBuf>, start: Start, standard_errors: bool) -> CliResult<()> {
    let (template, _) = load_params(RunConfig::require(&cfg.model, "model")?)?;
    let schedule = schedule.or(cfg.file.schedule.clone());
    let ds = load_dataset(cfg, schedule.as_deref())?;
    let paths = cfg.outputs(&["fit.json", "compatibility.csv", "compatibility.json"])?;
    let qc = quadrature(cfg);
    let opts = FitOptions { standard_errors, ..FitOptions::default() };
    let init = match start {
        Start::Staged => staged_estimates(&ds, &template, &opts.optim)?,
        Start::Model => template,
    };
    let fit = fit_joint(&ds, &init, &qc, &opts)?;
    if let Some(note) = &fit.information_note {
        log::warn!("{note}");
    }
    let compat = censored_compatibility(&ds, &fit.params, &qc)?;
    write_json(&fit, &paths[0])?;
    write_compatibility(&compat, &paths[1])?;
    write_json(&compat, &paths[2])?;
    println!(
        "log-likelihood {:.6} after {} iterations; compatibility statistic {}",
        fit.loglik,
        fit.iterations,
        compat.statistic.map_or("n/a".to_string(), |z| format!("{z:.3}"))
    );
    Ok(())
}

fn parse_grid(spec: &str) -> CliResult<Vec<f64>> {
    let bad = || CliError::Config(format!("--grid must look like start:end:points, got {spec:?}"));
    let parts: Vec<&str> = spec.split(':').collect();
    let [a, b, n] = parts.as_slice() else { return Err(bad()) };
    let a: f64 = a.trim().parse().map_err(|_| bad())?;
    let b: f64 = b.trim().parse().map_err(|_| bad())?;
    let n: usize = n.trim().parse().map_err(|_| bad())?;
    if !(a.is_finite() && b.is_finite() && b >= a && a >= 0.0 && n >= 1) {
        return Err(bad());
    }
    Ok(linspace(a, b, n))
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

pub fn predict(cfg: &RunConfig, patient: Option<String>, arm: usize, grid: Option<String>) -> CliResult<()> {
    let (params, _) = load_params(RunConfig::require(&cfg.model, "model")?)?;
    let (ts, y) = match &cfg.data {
        None => (vec![], vec![]),
        Some(path) => {
            let data_err = |e| CliError::DataFile { context: format!("reading {}", path.display()), source: e };
            let file = File::open(path).map_err(|e| data_err(e.into()))?;
            let mut hist = read_histories(file).map_err(data_err)?;
            let patient = patient.or(cfg.file.patient.clone());
            let (ts, values) = match patient {
                Some(id) => hist
                    .remove(&id)
                    .ok_or_else(|| CliError::Config(format!("patient {id} not found in {}", path.display())))?,
                None if hist.len() == 1 => hist.into_values().next().unwrap_or_default(),
                None => return Err(CliError::Config("--data holds several patients; choose one with --patient".into())),
            };
            let y = values
                .iter()
                .map(StateValue::as_real)
                .collect::<Option<Vec<f64>>>()
                .ok_or_else(|| CliError::DataFile {
                    context: format!("reading {}", path.display()),
                    source: vitalsurv::Error::Data("a predictive history cannot contain FLAT values".into()),
                })?;
            (ts, y)
        }
    };
    let qc = quadrature(cfg);
    let cp = clinical_predictive(&ts, &y, arm, &params, &qc)?;
    let start = cp.support_start();
    let grid = match grid.or(cfg.file.grid.clone()) {
        Some(g) => parse_grid(&g)?,
        None => linspace(start, start + params.lambda.quantile(0.99)?, DEFAULT_GRID_POINTS),
    };
    let paths = cfg.outputs(&["predictive.csv"])?;
    let mut w = create(&paths[0])?;
    let io = |e: std::io::Error| CliError::Core(e.into());
    writeln!(w, "t,density,survivor").map_err(io)?;
    for &t in &grid {
        let (d, s) = if t <= start { (0.0, 1.0) } else { (cp.density(t), cp.survivor(t)?) };
        writeln!(w, "{},{},{}", fmt_f64(t), fmt_f64(d), fmt_f64(s)).map_err(io)?;
    }
    w.flush().map_err(io)?;
    println!(
        "predictive on {} points from {} conditioning values, median {:.6}",
        grid.len(),
        ts.len(),
        cp.quantile(0.5)?
    );
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Diagnosis {
    pub params: ModelParams,
    pub loglik: f64,
    pub four_factors: FourFactors,
    pub compatibility: CompatibilityReport,
    /// The fit result the parameters came from, unchanged.
    pub fit: Option<FitResult>,
}

pub fn diagnose(cfg: &RunConfig, schedule: Option<PathBuf>) -> CliResult<()> {
    let (params, fit) = load_params(RunConfig::require(&cfg.model, "model")?)?;
    let schedule = schedule.or(cfg.file.schedule.clone());
    let ds = load_dataset(cfg, schedule.as_deref())?;
    let paths = cfg.outputs(&["diagnosis.json", "compatibility.csv"])?;
    let qc = quadrature(cfg);
    let loglik = dataset_loglik(&ds, &params, &qc)?;
    let four_factors = four_factor(&ds, &params, &qc)?;
    let compatibility = censored_compatibility(&ds, &params, &qc)?;
    write_compatibility(&compatibility, &paths[1])?;
    let flagged = compatibility.flagged;
    let statistic = compatibility.statistic;
    let diagnosis = Diagnosis { params, loglik, four_factors, compatibility, fit };
    write_json(&diagnosis, &paths[0])?;
    println!(
        "log-likelihood {loglik:.6}; compatibility statistic {}{}",
        statistic.map_or("n/a".to_string(), |z| format!("{z:.3}")),
        if flagged { " (flagged)" } else { "" }
    );
    Ok(())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProbeSpec {
    times: Vec<f64>,
    values: Vec<f64>,
    t: f64,
    index: usize,
    delta: f64,
    #[serde(default)]
    mc: Option<MCConfig>,
}

#[derive(Debug, Serialize)]
struct ExogeneityOutput {
    #[serde(flatten)]
    report: ProbeReport,
    /// `consistent_with_exogeneity` when the observation-level change is
    /// within Monte Carlo error of zero, `not_exogenous` otherwise.
    verdict: &'static str,
    mc: MCConfig,
}

pub fn check_exogeneity(cfg: &RunConfig, probe: Option<PathBuf>) -> CliResult<()> {
    let seed = cfg.seed()?;
    let model: ProbeModel = config_json(RunConfig::require(&cfg.model, "model")?, "model")?;
    let probe = probe.or(cfg.file.probe.clone());
    let spec: ProbeSpec = config_json(RunConfig::require(&probe, "probe")?, "probe")?;
    let mut mc = spec.mc.unwrap_or_default();
    mc.seed = seed;
    if let Some(n) = cfg.mc_paths {
        mc.paths = n;
    }
    mc.validate()?;
    let paths = cfg.outputs(&["exogeneity.json"])?;
    let report = exogeneity_probe(&model, &spec.times, &spec.values, spec.t, spec.index, spec.delta, &mc)?;
    let verdict = if report.observation_level_null { "consistent_with_exogeneity" } else { "not_exogenous" };
    let out = ExogeneityOutput { report, verdict, mc };
    write_json(&out, &paths[0])?;
    print_json(&out)
}

pub fn check_vitality(cfg: &RunConfig, spec: Option<PathBuf>) -> CliResult<()> {
    let spec_path = spec.or(cfg.file.spec.clone());
    let spec: VitalitySpec = config_json(RunConfig::require(&spec_path, "spec")?, "trajectory table")?;
    let paths = cfg.outputs(&["vitality.json"])?;
    let verdict: VitalityVerdict = vitality_check(&spec)?;
    write_json(&verdict, &paths[0])?;
    print_json(&verdict)
}

#[derive(Debug, Serialize)]
struct EvolutionOutput {
    x_evolves_independently: EvolutionVerdict,
    y_evolves_independently: EvolutionVerdict,
    processes_independent: bool,
    conditionally_independent_given_initial: bool,
}

pub fn check_evolution(cfg: &RunConfig, spec: Option<PathBuf>) -> CliResult<()> {
    let spec_path = spec.or(cfg.file.spec.clone());
    let spec: EvolutionSpec = config_json(RunConfig::require(&spec_path, "spec")?, "trajectory table")?;
    let paths = cfg.outputs(&["evolution.json"])?;
    let out = EvolutionOutput {
        x_evolves_independently: independent_evolution_check(&spec, Component::X)?,
        y_evolves_independently: independent_evolution_check(&spec, Component::Y)?,
        processes_independent: processes_independent(&spec)?,
        conditionally_independent_given_initial: conditionally_independent_given_initial(&spec)?,
    };
    write_json(&out, &paths[0])?;
    print_json(&out)
}
