//! # brodinger-lab
//!
//! Deterministic experiment driver on top of `brodinger-core`. A run takes an
//! [`ExperimentConfig`], writes its tables (CSV) and structured results (JSON)
//! under `<out_dir>/<kind>/`, and finishes with a `manifest.json` holding the
//! config echo, the tool version, wall times and a SHA-256 of every file.
//!
//! All randomness is derived from the config seed, so a config reproduces
//! every CSV byte for byte.

pub mod artifacts;
pub mod config;
pub mod experiments;

use std::path::PathBuf;

use thiserror::Error;

pub use config::{Experiment, ExperimentConfig, PathCheck};

#[derive(Debug, Error)]
pub enum LabError {
    /// Invalid command line, config or input file.
    #[error("usage: {0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] brodinger_core::Error),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, LabError>;

/// Process exit status for a failed run.
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

impl LabError {
    pub fn exit_code(&self) -> i32 {
        use brodinger_core::Error as E;
        match self {
            LabError::Usage(_) => EXIT_USAGE,
            LabError::Core(E::Parse(_) | E::InvalidDensity(_) | E::GridMismatch(_) | E::Capacity { .. }) => EXIT_USAGE,
            _ => EXIT_FAILURE,
        }
    }
}

/// Result of one experiment.
#[derive(Debug)]
pub struct RunReport {
    pub kind: &'static str,
    pub dir: PathBuf,
    /// Main table of the experiment.
    pub primary: PathBuf,
    pub manifest: PathBuf,
    /// Violated invariants, empty when the run passes.
    pub failures: Vec<String>,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Runs one experiment and writes its artifacts and manifest.
pub fn run(config: &ExperimentConfig) -> Result<RunReport> {
    use experiments as x;
    config.validate()?;
    let mut dir = artifacts::ArtifactDir::create(config.experiment_dir())?;
    let outcome = match &config.experiment {
        Experiment::Bridge { rho0, rho1, d, m, n_t } => x::bridge(config, &mut dir, rho0, rho1, *d, *m, *n_t),
        Experiment::FundCheck {
            curves,
            d,
            m,
            n_t,
            c_const,
            alpha,
        } => x::fund_check(config, &mut dir, curves, *d, *m, *n_t, *c_const, *alpha),
        Experiment::Paths {
            check,
            d,
            n,
            samples,
            paths,
        } => x::paths(config, &mut dir, *check, *d, *n, *samples, *paths),
        Experiment::Flows { m, n, gamma } => x::flows(config, &mut dir, *m, *n, gamma),
        Experiment::Multiphase { phases, n_t } => x::multiphase(config, &mut dir, phases, *n_t),
        Experiment::Convexity {
            rho0,
            rho1,
            m,
            n_t,
            phases,
            mp_n_t,
        } => x::convexity(config, &mut dir, rho0, rho1, *m, *n_t, phases, *mp_n_t),
        Experiment::GammaSweep { rho0, rho1, m, n_t } => x::gamma_sweep(config, &mut dir, rho0, rho1, *m, *n_t),
    }?;
    let root = dir.root().to_path_buf();
    let manifest = dir.finish(config, &outcome.failures)?;
    Ok(RunReport {
        kind: config.kind(),
        dir: root,
        primary: outcome.primary,
        manifest,
        failures: outcome.failures,
    })
}

/// Builds the global thread pool, capped by `BRODINGER_THREADS` when set.
pub fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var("BRODINGER_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| LabError::Usage(format!("BRODINGER_THREADS must be a positive integer, got '{v}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| LabError::Usage(format!("thread pool: {e}")))
}
