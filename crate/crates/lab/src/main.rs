use std::path::{Path, PathBuf};
use std::process::ExitCode;

use brodinger_core::io::parse_nu_list;
use brodinger_lab::{init_threads, run, Experiment, ExperimentConfig, LabError, PathCheck, Result, EXIT_FAILURE};
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Kinetic and entropic transport experiments on the flat torus.
///
/// Every subcommand writes its artifacts under `<out>/<kind>/` together with
/// a manifest (config echo, version, wall times, SHA-256 per file). Exit
/// status: 0 when every check passes, 1 when a check fails (the violated
/// invariants are listed on stderr), 2 on usage errors. The environment
/// variable BRODINGER_THREADS caps the number of worker threads.
#[derive(Parser)]
#[command(name = "brodinger", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Schrödinger bridge between two densities.
    Bridge(BridgeArgs),
    /// Verify the heat-regularization inequalities on a family of curves.
    FundCheck(FundArgs),
    /// Checks on discrete Brownian paths and torus bridges.
    Paths(PathsArgs),
    /// Brödinger flows on the discrete path lattice.
    Flows(FlowsArgs),
    /// Multiphase plans, pressures and pairings.
    Multiphase(MultiphaseArgs),
    /// Entropy convexity along bridges and multiphase plans.
    Convexity(ConvexityArgs),
    /// Small-noise sweep of the Schrödinger cost against the transport cost.
    GammaSweep(SweepArgs),
    /// Run an experiment from a JSON config file.
    Run(RunArgs),
}

#[derive(Args)]
struct Common {
    /// Seed of every random stream.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct BridgeArgs {
    /// Start density: JSON or CSV file, `builtin:uniform`, `builtin:gaussian:<c>:<sigma>`.
    #[arg(long)]
    rho0: String,
    /// End density, same forms as --rho0.
    #[arg(long)]
    rho1: String,
    /// Diffusivity ν.
    #[arg(long)]
    nu: f64,
    /// Dimension of the torus (1 or 2).
    #[arg(long, default_value_t = 1)]
    d: usize,
    /// Cells per axis.
    #[arg(long)]
    m: usize,
    /// Time steps of the interpolation.
    #[arg(long, default_value_t = 32)]
    nt: usize,
    /// L¹ tolerance on the marginals.
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct FundArgs {
    /// Directory of curve JSON files, or `builtin:random<count>` (e.g. builtin:random50).
    #[arg(long)]
    curves: String,
    /// Comma-separated ν values.
    #[arg(long)]
    nu_list: String,
    /// Where to copy the report CSV.
    #[arg(long)]
    report: PathBuf,
    /// Dimension of builtin curves.
    #[arg(long, default_value_t = 1)]
    d: usize,
    /// Cells per axis of builtin curves.
    #[arg(long, default_value_t = 64)]
    m: usize,
    /// Time steps of builtin curves.
    #[arg(long, default_value_t = 16)]
    nt: usize,
    /// Fisher constant (default d/8).
    #[arg(long)]
    c_const: Option<f64>,
    /// Weight of the added Fisher term (default ν).
    #[arg(long)]
    alpha: Option<f64>,
    /// Artifact directory (default: the report's directory).
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Clone, Copy, ValueEnum)]
enum CheckArg {
    AnMoment,
    CameronMartin,
    BridgeEntropy,
    Recovery,
}

#[derive(Args)]
struct PathsArgs {
    #[arg(long, value_enum)]
    check: CheckArg,
    /// Diffusivity ν.
    #[arg(long)]
    nu: f64,
    /// Number of time steps N.
    #[arg(long)]
    n: usize,
    /// Monte-Carlo samples (bridge-entropy) or sample budget (recovery).
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    /// Dimension (1 or 2).
    #[arg(long, default_value_t = 1)]
    d: usize,
    /// Number of seeded test paths or loops.
    #[arg(long, default_value_t = 5)]
    paths: usize,
    /// Where to copy the result CSV.
    #[arg(long)]
    out: PathBuf,
    /// Artifact directory (default: the CSV's directory).
    #[arg(long)]
    work_dir: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct FlowsArgs {
    /// Lattice cells.
    #[arg(long)]
    m: usize,
    /// Time steps.
    #[arg(long)]
    n: usize,
    /// Endpoint coupling: identity, antipodal, or file:<csv>.
    #[arg(long)]
    gamma: String,
    /// Comma-separated ν values.
    #[arg(long)]
    nu_list: String,
    /// Constraint tolerance of the scaling solver.
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    /// Where to copy the result CSV.
    #[arg(long)]
    out: PathBuf,
    /// Artifact directory (default: the CSV's directory).
    #[arg(long)]
    work_dir: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct MultiphaseArgs {
    /// Phase spec: JSON file, inline JSON, or `builtin:two-bump:<m>`.
    #[arg(long)]
    phases: String,
    /// Comma-separated ν values.
    #[arg(long)]
    nu_list: String,
    /// L¹ tolerance on every constraint.
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    /// Time steps.
    #[arg(long, default_value_t = 48)]
    nt: usize,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct ConvexityArgs {
    /// Start density of the bridge instance.
    #[arg(long, default_value = "builtin:gaussian:0.3:0.1")]
    rho0: String,
    /// End density of the bridge instance.
    #[arg(long, default_value = "builtin:gaussian:0.6:0.12")]
    rho1: String,
    /// Cells of the bridge instance.
    #[arg(long, default_value_t = 128)]
    m: usize,
    /// Time steps of the bridges.
    #[arg(long, default_value_t = 32)]
    nt: usize,
    /// Phase spec of the multiphase instance.
    #[arg(long, default_value = "builtin:two-bump:64")]
    phases: String,
    /// Time steps of the multiphase plans.
    #[arg(long, default_value_t = 32)]
    mp_nt: usize,
    /// Comma-separated ν values.
    #[arg(long)]
    nu_list: String,
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, default_value = "builtin:gaussian:0.3:0.1")]
    rho0: String,
    #[arg(long, default_value = "builtin:gaussian:0.6:0.12")]
    rho1: String,
    /// Cells.
    #[arg(long, default_value_t = 256)]
    m: usize,
    /// Time steps of the bridges.
    #[arg(long, default_value_t = 64)]
    nt: usize,
    /// Comma-separated ν values.
    #[arg(long)]
    nu_list: String,
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
}

fn nus(text: &str) -> Result<Vec<f64>> {
    parse_nu_list(text).map_err(|e| LabError::Usage(e.to_string()))
}

fn parent_or_cwd(p: &Path) -> PathBuf {
    match p.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

/// Config to run plus an optional extra copy of the main table.
fn build(cli: Cli) -> Result<(ExperimentConfig, Option<PathBuf>)> {
    let cfg = |seed, out_dir, nu_list, tol, experiment| ExperimentConfig {
        seed,
        out_dir,
        nu_list,
        tol,
        experiment,
    };
    Ok(match cli.command {
        Command::Bridge(a) => (
            cfg(
                a.common.seed,
                a.out,
                vec![a.nu],
                a.tol,
                Experiment::Bridge {
                    rho0: a.rho0,
                    rho1: a.rho1,
                    d: a.d,
                    m: a.m,
                    n_t: a.nt,
                },
            ),
            None,
        ),
        Command::FundCheck(a) => {
            let out = a.out.unwrap_or_else(|| parent_or_cwd(&a.report));
            (
                cfg(
                    a.common.seed,
                    out,
                    nus(&a.nu_list)?,
                    1e-9,
                    Experiment::FundCheck {
                        curves: a.curves,
                        d: a.d,
                        m: a.m,
                        n_t: a.nt,
                        c_const: a.c_const,
                        alpha: a.alpha,
                    },
                ),
                Some(a.report),
            )
        }
        Command::Paths(a) => {
            let check = match a.check {
                CheckArg::AnMoment => PathCheck::AnMoment,
                CheckArg::CameronMartin => PathCheck::CameronMartin,
                CheckArg::BridgeEntropy => PathCheck::BridgeEntropy,
                CheckArg::Recovery => PathCheck::Recovery,
            };
            let work = a.work_dir.unwrap_or_else(|| parent_or_cwd(&a.out));
            (
                cfg(
                    a.common.seed,
                    work,
                    vec![a.nu],
                    1e-9,
                    Experiment::Paths {
                        check,
                        d: a.d,
                        n: a.n,
                        samples: a.samples,
                        paths: a.paths,
                    },
                ),
                Some(a.out),
            )
        }
        Command::Flows(a) => {
            let work = a.work_dir.unwrap_or_else(|| parent_or_cwd(&a.out));
            (
                cfg(
                    a.common.seed,
                    work,
                    nus(&a.nu_list)?,
                    a.tol,
                    Experiment::Flows {
                        m: a.m,
                        n: a.n,
                        gamma: a.gamma,
                    },
                ),
                Some(a.out),
            )
        }
        Command::Multiphase(a) => (
            cfg(
                a.common.seed,
                a.out,
                nus(&a.nu_list)?,
                a.tol,
                Experiment::Multiphase {
                    phases: a.phases,
                    n_t: a.nt,
                },
            ),
            None,
        ),
        Command::Convexity(a) => (
            cfg(
                a.common.seed,
                a.out,
                nus(&a.nu_list)?,
                a.tol,
                Experiment::Convexity {
                    rho0: a.rho0,
                    rho1: a.rho1,
                    m: a.m,
                    n_t: a.nt,
                    phases: a.phases,
                    mp_n_t: a.mp_nt,
                },
            ),
            None,
        ),
        Command::GammaSweep(a) => (
            cfg(
                a.common.seed,
                a.out,
                nus(&a.nu_list)?,
                a.tol,
                Experiment::GammaSweep {
                    rho0: a.rho0,
                    rho1: a.rho1,
                    m: a.m,
                    n_t: a.nt,
                },
            ),
            None,
        ),
        Command::Run(a) => {
            let text = std::fs::read_to_string(&a.config)
                .map_err(|e| LabError::Usage(format!("cannot read {}: {e}", a.config.display())))?;
            (ExperimentConfig::from_json(&text)?, None)
        }
    })
}

fn main_inner() -> Result<i32> {
    init_threads()?;
    let (config, copy_to) = build(Cli::parse())?;
    let report = run(&config)?;
    if let Some(dest) = copy_to {
        std::fs::copy(&report.primary, &dest).map_err(|e| LabError::Io { path: dest.clone(), source: e })?;
    }
    if report.passed() {
        println!("{}: ok ({})", report.kind, report.dir.display());
        Ok(0)
    } else {
        eprintln!("{}: {} check(s) failed", report.kind, report.failures.len());
        for f in &report.failures {
            eprintln!("  - {f}");
        }
        eprintln!("artifacts: {}", report.dir.display());
        Ok(EXIT_FAILURE)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match main_inner() {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
