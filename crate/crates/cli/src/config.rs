//! Run configuration: command-line flags over the `--config` file over defaults.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use vitalsurv::io::read_json;

use crate::error::{CliError, CliResult};
use crate::GlobalArgs;

/// Optional JSON file supplying any flag by its long name (with underscores).
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub model: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub events: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    pub tol: Option<f64>,
    pub mc_paths: Option<usize>,
    pub force: Option<bool>,
    pub scheme: Option<PathBuf>,
    pub patients: Option<usize>,
    pub schedule: Option<PathBuf>,
    pub probe: Option<PathBuf>,
    pub spec: Option<PathBuf>,
    pub grid: Option<String>,
    pub patient: Option<String>,
}

#[derive(Debug, Default)]
pub struct RunConfig {
    pub model: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub events: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    pub tol: Option<f64>,
    pub mc_paths: Option<usize>,
    pub force: bool,
    /// Remaining file entries, consulted by individual commands.
    pub file: ConfigFile,
}

impl RunConfig {
    pub fn resolve(args: &GlobalArgs) -> CliResult<Self> {
        let file: ConfigFile = match &args.config {
            Some(p) => read_json(p).map_err(|e| CliError::ConfigFile {
                context: format!("reading config {}", p.display()),
                source: e,
            })?,
            None => ConfigFile::default(),
        };
        if let Some(t) = args.tol.or(file.tol) {
            if !(t > 0.0 && t < 1.0) {
                return Err(CliError::Config(format!("--tol must lie in (0, 1), got {t}")));
            }
        }
        if args.mc_paths.or(file.mc_paths) == Some(0) {
            return Err(CliError::Config("--mc-paths must be >= 1".into()));
        }
        Ok(RunConfig {
            model: args.model.clone().or(file.model.clone()),
            data: args.data.clone().or(file.data.clone()),
            events: args.events.clone().or(file.events.clone()),
            seed: args.seed.or(file.seed),
            out: args.out.clone().or(file.out.clone()),
            workers: args.workers.or(file.workers),
            tol: args.tol.or(file.tol),
            mc_paths: args.mc_paths.or(file.mc_paths),
            force: args.force || file.force.unwrap_or(false),
            file,
        })
    }

    pub fn require<'a>(value: &'a Option<PathBuf>, flag: &str) -> CliResult<&'a Path> {
        value
            .as_deref()
            .ok_or_else(|| CliError::Config(format!("--{flag} is required")))
    }

    pub fn seed(&self) -> CliResult<u64> {
        self.seed
            .ok_or_else(|| CliError::Config("--seed is required for stochastic commands".into()))
    }

    /// Creates the output directory and refuses to replace existing files
    /// unless forced. Returns the full output paths in the order given.
    pub fn outputs(&self, names: &[&str]) -> CliResult<Vec<PathBuf>> {
        let dir = Self::require(&self.out, "out")?;
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Config(format!("cannot create output directory {}: {e}", dir.display())))?;
        let paths: Vec<PathBuf> = names.iter().map(|n| dir.join(n)).collect();
        if !self.force {
            if let Some(p) = paths.iter().find(|p| p.exists()) {
                return Err(CliError::Config(format!(
                    "{} exists; pass --force to overwrite",
                    p.display()
                )));
            }
        }
        Ok(paths)
    }
}
