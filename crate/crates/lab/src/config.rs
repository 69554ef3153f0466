//! Experiment configuration.
//!
//! A config is a JSON document:
//!
//! ```json
//! {
//!   "seed": 7,
//!   "out_dir": "runs",
//!   "nu_list": [0.4, 0.2, 0.1],
//!   "tol": 1e-9,
//!   "experiment": { "kind": "gamma-sweep", "rho0": "builtin:gaussian:0.3:0.1",
//!                   "rho1": "builtin:gaussian:0.6:0.12", "m": 128, "n_t": 32 }
//! }
//! ```
//!
//! Density sources are either a file (`.json` or `.csv`) or one of
//! `builtin:uniform`, `builtin:gaussian:<center>:<sigma>` (centers repeat
//! across axes in 2-D).

use std::path::{Path, PathBuf};

use brodinger_core::io::{parse_density_csv, parse_density_json, parse_phases_json};
use brodinger_core::multiphase::Phase;
use brodinger_core::{GridDensity, TorusGrid};
use serde::{Deserialize, Serialize};

use crate::{LabError, Result};

/// Largest `m` accepted by a config, per axis.
pub const MAX_M: usize = 4096;

/// Largest number of time steps accepted by a config.
pub const MAX_STEPS: usize = 4096;

/// Largest Monte-Carlo budget accepted by a config.
pub const MAX_SAMPLES: usize = 10_000_000;

fn default_tol() -> f64 {
    1e-9
}

fn default_d() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub nu_list: Vec<f64>,
    #[serde(default = "default_tol")]
    pub tol: f64,
    pub experiment: Experiment,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PathCheck {
    AnMoment,
    CameronMartin,
    BridgeEntropy,
    Recovery,
}

impl PathCheck {
    pub fn name(self) -> &'static str {
        match self {
            PathCheck::AnMoment => "an-moment",
            PathCheck::CameronMartin => "cameron-martin",
            PathCheck::BridgeEntropy => "bridge-entropy",
            PathCheck::Recovery => "recovery",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Experiment {
    /// Schrödinger bridge between two densities, one solve per `ν`.
    Bridge {
        rho0: String,
        rho1: String,
        #[serde(default = "default_d")]
        d: usize,
        m: usize,
        n_t: usize,
    },
    /// Regularization inequalities over a family of curves.
    FundCheck {
        /// Directory of curve JSON files, or `builtin:random<count>`.
        curves: String,
        #[serde(default = "default_d")]
        d: usize,
        m: usize,
        n_t: usize,
        /// Fisher constant, `d/8` when absent.
        #[serde(default)]
        c_const: Option<f64>,
        /// Weight of the added Fisher term, `ν` when absent.
        #[serde(default)]
        alpha: Option<f64>,
    },
    /// Checks on discrete Brownian paths and bridges.
    Paths {
        check: PathCheck,
        #[serde(default = "default_d")]
        d: usize,
        n: usize,
        samples: usize,
        /// Number of seeded test paths.
        #[serde(default = "default_path_count")]
        paths: usize,
    },
    /// Brödinger flows on the path lattice.
    Flows { m: usize, n: usize, gamma: String },
    /// Multiphase plans and pressures.
    Multiphase {
        /// Phase file, inline JSON, or `builtin:two-bump:<m>`.
        phases: String,
        #[serde(default = "default_mp_steps")]
        n_t: usize,
    },
    /// Entropy convexity along bridges and multiphase plans.
    Convexity {
        rho0: String,
        rho1: String,
        m: usize,
        n_t: usize,
        phases: String,
        #[serde(default = "default_mp_steps")]
        mp_n_t: usize,
    },
    /// Small-noise sweep of the Schrödinger cost against the transport cost.
    GammaSweep {
        rho0: String,
        rho1: String,
        m: usize,
        n_t: usize,
    },
}

fn default_path_count() -> usize {
    5
}

fn default_mp_steps() -> usize {
    48
}

impl Experiment {
    pub fn kind(&self) -> &'static str {
        match self {
            Experiment::Bridge { .. } => "bridge",
            Experiment::FundCheck { .. } => "fund-check",
            Experiment::Paths { .. } => "paths",
            Experiment::Flows { .. } => "flows",
            Experiment::Multiphase { .. } => "multiphase",
            Experiment::Convexity { .. } => "convexity",
            Experiment::GammaSweep { .. } => "gamma-sweep",
        }
    }
}

fn usage(msg: impl Into<String>) -> LabError {
    LabError::Usage(msg.into())
}

fn check_range(what: &str, v: usize, lo: usize, hi: usize) -> Result<()> {
    if v < lo || v > hi {
        return Err(usage(format!("{what} must lie in [{lo}, {hi}], got {v}")));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| usage(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn kind(&self) -> &'static str {
        self.experiment.kind()
    }

    /// Directory owned by this experiment.
    pub fn experiment_dir(&self) -> PathBuf {
        self.out_dir.join(self.kind())
    }

    /// Structural checks that need no file access.
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(usage(format!("tol must lie in (0, 1), got {}", self.tol)));
        }
        if self.nu_list.iter().any(|&nu| !(nu > 0.0 && nu.is_finite())) {
            return Err(usage("every nu must be positive and finite"));
        }
        let needs_nu = !matches!(self.experiment, Experiment::Paths { check: PathCheck::CameronMartin, .. });
        if needs_nu && self.nu_list.is_empty() {
            return Err(usage("nu_list must not be empty"));
        }
        match &self.experiment {
            Experiment::Bridge { d, m, n_t, .. } | Experiment::FundCheck { d, m, n_t, .. } => {
                check_range("d", *d, 1, 2)?;
                check_range("m", *m, 2, MAX_M)?;
                check_range("n_t", *n_t, 1, MAX_STEPS)?;
            }
            Experiment::GammaSweep { m, n_t, .. } => {
                check_range("m", *m, 2, MAX_M)?;
                check_range("n_t", *n_t, 1, MAX_STEPS)?;
            }
            Experiment::Convexity { m, n_t, mp_n_t, .. } => {
                check_range("m", *m, 2, MAX_M)?;
                check_range("n_t", *n_t, 2, MAX_STEPS)?;
                check_range("mp_n_t", *mp_n_t, 2, MAX_STEPS)?;
            }
            Experiment::Paths { d, n, samples, paths, check } => {
                check_range("d", *d, 1, 2)?;
                check_range("n", *n, 1, MAX_STEPS)?;
                check_range("paths", *paths, 1, 1000)?;
                if matches!(check, PathCheck::BridgeEntropy | PathCheck::Recovery) {
                    check_range("samples", *samples, 2, MAX_SAMPLES)?;
                }
                if *check == PathCheck::BridgeEntropy && self.nu_list.iter().any(|&nu| nu > 1.0) {
                    return Err(usage("bridge-entropy needs nu <= 1"));
                }
                if *check == PathCheck::CameronMartin && *n < 2 {
                    return Err(usage("cameron-martin needs n >= 2"));
                }
            }
            Experiment::Flows { m, n, gamma } => {
                check_range("m", *m, 2, MAX_M)?;
                check_range("n", *n, 1, MAX_STEPS)?;
                if !matches!(gamma.as_str(), "identity" | "antipodal") && !gamma.starts_with("file:") {
                    return Err(usage(format!("unknown coupling '{gamma}'")));
                }
            }
            Experiment::Multiphase { n_t, .. } => check_range("n_t", *n_t, 2, MAX_STEPS)?,
        }
        Ok(())
    }
}

/// Reads a density from a source string on `grid`.
pub fn load_density(source: &str, grid: &TorusGrid) -> Result<GridDensity> {
    if let Some(spec) = source.strip_prefix("builtin:") {
        let parts: Vec<&str> = spec.split(':').collect();
        return match parts.as_slice() {
            ["uniform"] => Ok(GridDensity::uniform(grid)),
            ["gaussian", c, s] => {
                let c: f64 = c.parse().map_err(|_| usage(format!("bad center in '{source}'")))?;
                let s: f64 = s.parse().map_err(|_| usage(format!("bad width in '{source}'")))?;
                let center = vec![c; grid.dim()];
                Ok(GridDensity::wrapped_gaussian(grid, &center, s)?)
            }
            _ => Err(usage(format!("unknown builtin density '{source}'"))),
        };
    }
    let path = Path::new(source);
    let text = read_input(path)?;
    let rho = match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => parse_density_csv(&text, *grid)?,
        _ => parse_density_json(&text)?,
    };
    if rho.grid() != *grid {
        return Err(usage(format!(
            "density in {source} lives on {:?}, expected {:?}",
            rho.grid(),
            grid
        )));
    }
    Ok(rho)
}

/// Reads phases from a file, inline JSON, or `builtin:two-bump:<m>`.
pub fn load_phases(source: &str) -> Result<Vec<Phase>> {
    if let Some(m) = source.strip_prefix("builtin:two-bump:") {
        let m: usize = m.parse().map_err(|_| usage(format!("bad size in '{source}'")))?;
        check_range("m", m, 4, MAX_M)?;
        let grid = TorusGrid::line(m)?;
        return Ok(brodinger_core::multiphase::two_bump_exchange(&grid)?);
    }
    if source.trim_start().starts_with('{') {
        return Ok(parse_phases_json(source)?);
    }
    Ok(parse_phases_json(&read_input(Path::new(source))?)?)
}

pub fn read_input(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))
}
