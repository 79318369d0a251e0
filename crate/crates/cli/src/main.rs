//! `vitalsurv` command-line tool.

mod commands;
mod config;
mod error;

use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;

use crate::error::CliError;

#[derive(Parser, Debug)]
#[command(name = "vitalsurv", version, about = "Survival analysis with vital health processes")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand. Values given here take precedence over
/// the `--config` file, which takes precedence over built-in defaults.
#[derive(Args, Debug, Default, Clone)]
pub struct GlobalArgs {
    /// JSON run configuration supplying defaults for any flag.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Model JSON: parameters, a fit result, or an exposure/latent model.
    #[arg(long, global = true)]
    pub model: Option<PathBuf>,
    /// Long-format measurements CSV (`patient_id,time,value`).
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// Events CSV (`patient_id,terminal_time,status,arm`).
    #[arg(long, global = true)]
    pub events: Option<PathBuf>,
    /// Random seed; required by stochastic commands.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (default: logical cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Relative tolerance of the survival-time quadrature.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    /// Monte Carlo paths for exposure and latent-process integrals.
    #[arg(long = "mc-paths", global = true)]
    pub mc_paths: Option<usize>,
    /// Overwrite existing output files.
    #[arg(long, global = true)]
    pub force: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate a dataset under a fixed or sequential appointment scheme.
    Simulate {
        /// Scheme JSON: `{"type": "fixed", "horizon": 12, "gap": 0.25}` or
        /// `{"type": "sequential", "horizon": 12, "policy": {...}}`.
        #[arg(long)]
        scheme: Option<PathBuf>,
        /// Number of patients [default: 100].
        #[arg(long)]
        patients: Option<usize>,
    },
    /// Staged and joint maximum-likelihood fit.
    Fit {
        /// Appointment bookings CSV (`patient_id,time,scheduled_next`).
        #[arg(long)]
        schedule: Option<PathBuf>,
        /// Start the joint fit from staged estimates or from the model file.
        #[arg(long, value_enum, default_value_t = Start::Staged)]
        start: Start,
        /// Skip the observed-information standard errors.
        #[arg(long)]
        no_se: bool,
    },
    /// Clinical predictive density and survivor of the survival time given a
    /// measurement history.
    Predict {
        /// Patient to condition on when `--data` holds several.
        #[arg(long)]
        patient: Option<String>,
        /// Treatment arm of the patient.
        #[arg(long, default_value_t = 0)]
        arm: usize,
        /// Evaluation grid `start:end:points`.
        #[arg(long)]
        grid: Option<String>,
    },
    /// Log-likelihood, four-factor split and censored-record compatibility at
    /// given parameters.
    Diagnose {
        /// Appointment bookings CSV (`patient_id,time,scheduled_next`).
        #[arg(long)]
        schedule: Option<PathBuf>,
    },
    /// Does survival before `t` depend on exposures observed after `t`?
    CheckExogeneity {
        /// Probe JSON: `{"times": [...], "values": [...], "t": .., "index": .., "delta": ..}`.
        #[arg(long)]
        probe: Option<PathBuf>,
    },
    /// Vitality of a finite-state process given as a trajectory table.
    CheckVitality {
        /// Spec JSON: `{"times": [...], "trajectories": [{"states", "death_time", "probability"}]}`.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Independent evolution of two finite-state processes.
    CheckEvolution {
        /// Spec JSON with joint `(x, y)` trajectories and their probabilities.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Start {
    Staged,
    Model,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = config::RunConfig::resolve(&cli.global)?;
    if let Some(n) = cfg.workers {
        if n == 0 {
            return Err(CliError::Config("--workers must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot start worker pool: {e}")))?;
    }
    match cli.command {
        Command::Simulate { scheme, patients } => commands::simulate(&cfg, scheme, patients),
        Command::Fit { schedule, start, no_se } => commands::fit(&cfg, schedule, start, !no_se),
        Command::Predict { patient, arm, grid } => commands::predict(&cfg, patient, arm, grid),
        Command::Diagnose { schedule } => commands::diagnose(&cfg, schedule),
        Command::CheckExogeneity { probe } => commands::check_exogeneity(&cfg, probe),
        Command::CheckVitality { spec } => commands::check_vitality(&cfg, spec),
        Command::CheckEvolution { spec } => commands::check_evolution(&cfg, spec),
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("{}", e.to_json());
        std::process::exit(e.exit_code());
    }
}
