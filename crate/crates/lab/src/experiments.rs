//! One runner per experiment kind. Each writes its artifacts and returns the
//! list of violated invariants (empty on success).

use std::f64::consts::PI;
use std::path::PathBuf;

use brodinger_core::curves::random_smooth_curve;
use brodinger_core::flows::{
    antipodal_coupling, gamma_convergence_flows, identity_coupling, BroOptions, PathLattice,
};
use brodinger_core::io::{parse_coupling_csv, parse_curve_json};
use brodinger_core::multiphase::{
    audit_pressure, average_entropy_profile, mreu_from_points, raw_pressure, relative_change, solve_mbro, test_function,
    MbroOptions, Phase,
};
use brodinger_core::path_lab::{
    build_recovery_flow, cameron_martin_entropy, discrete_action_an, exp_moment_check,
    torus_bridge_entropy_check, DiscretePath, MomentMode,
};
use brodinger_core::regularizer::{default_constant, verify_fund_inequalities};
use brodinger_core::rng::stream_rng;
use brodinger_core::schrodinger::{
    entropic_interpolation, entropy_convexity_profile, evaluate_h_nu, gamma_sweep_sch, solve_schrodinger_system,
    static_entropic_cost, ConvexityProfile, SweepOptions, DENSE_COUPLING_CAP,
};
use brodinger_core::{entropy, geodesic_dist, DensityCurve, TorusGrid};
use rand::Rng;
use serde::Serialize;

use crate::artifacts::{num, opt_num, ArtifactDir};
use crate::config::{load_density, load_phases, read_input, ExperimentConfig, PathCheck};
use crate::{LabError, Result};

/// Iteration cap for every scaling solver driven from here.
pub const MAX_ITER: usize = 200_000;

/// Allowed negative second difference of an entropy profile, relative to its
/// largest magnitude.
pub const CONVEXITY_TOL: f64 = 1e-4;

/// Quadrature tolerance of the exact moment bound.
pub const MOMENT_TOL: f64 = 1e-9;

/// Tolerance of the Cameron–Martin equality.
pub const CAMERON_MARTIN_TOL: f64 = 1e-10;

/// Grid on which the bridge-entropy constant is measured.
pub const BRIDGE_CONSTANT_CELLS: usize = 64;

/// Column labels of the pressure test functions.
const PHI_NAMES: [&str; 3] = ["sin2pix_sinpit", "cos2pix_sinpit", "sin4pix_sin2pit"];

/// Output of a runner: the main table and any violated invariants.
pub struct Outcome {
    pub primary: PathBuf,
    pub failures: Vec<String>,
}

pub fn bridge(cfg: &ExperimentConfig, dir: &mut ArtifactDir, rho0: &str, rho1: &str, d: usize, m: usize, n_t: usize) -> Result<Outcome> {
    let grid = TorusGrid::new(d, m)?;
    let r0 = load_density(rho0, &grid)?;
    let r1 = load_density(rho1, &grid)?;
    let endpoint = 0.5 * (entropy(&r0) + entropy(&r1));
    let mut failures = Vec::new();
    let mut rows = Vec::new();
    for (i, &nu) in cfg.nu_list.iter().enumerate() {
        let solved = dir.timed(&format!("bridge nu={nu}"), || -> Result<_> {
            let pot = solve_schrodinger_system(&r0, &r1, nu, cfg.tol, MAX_ITER)?;
            let bridge = entropic_interpolation(&pot, n_t)?;
            let rep = evaluate_h_nu(&bridge.curve, nu)?;
            let static_cost = if grid.len() <= DENSE_COUPLING_CAP {
                Some(static_entropic_cost(&pot.coupling()?, &grid, nu)?)
            } else {
                None
            };
            Ok((pot, bridge, rep, static_cost))
        });
        let (pot, bridge, rep, static_cost) = match solved {
            Ok(v) => v,
            Err(e) => {
                failures.push(format!("nu = {nu}: {e}"));
                rows.push(vec![num(nu), num(f64::NAN), num(f64::NAN), num(f64::NAN), String::new(), num(nu * endpoint)]);
                continue;
            }
        };
        let worst = pot.marginal_error[0].max(pot.marginal_error[1]);
        if worst > cfg.tol {
            failures.push(format!("nu = {nu}: marginal error {worst:e} above tol {:e}", cfg.tol));
        }
        if rep.h_nu < -1e-10 {
            failures.push(format!("nu = {nu}: negative cost {:e}", rep.h_nu));
        }
        dir.write_json(&format!("potentials_{i:02}.json"), &pot)?;
        dir.write_json(&format!("curve_{i:02}.json"), &bridge)?;
        rows.push(vec![num(nu), num(rep.action), num(rep.fisher), num(rep.h_nu), opt_num(static_cost), num(nu * endpoint)]);
    }
    let primary = dir.write_csv(
        "summary.csv",
        &["nu", "action", "fisher", "H_nu", "static_cost", "endpoint_entropy"],
        &rows,
    )?;
    Ok(Outcome { primary, failures })
}

fn load_curves(source: &str, grid: &TorusGrid, n_t: usize, seed: u64) -> Result<Vec<(String, DensityCurve)>> {
    if let Some(count) = source.strip_prefix("builtin:random") {
        let count: usize = count
            .parse()
            .map_err(|_| LabError::Usage(format!("bad curve count in '{source}'")))?;
        if count == 0 || count > 10_000 {
            return Err(LabError::Usage(format!("curve count must lie in [1, 10000], got {count}")));
        }
        return (0..count)
            .map(|i| {
                let mut rng = stream_rng(seed, "fund-check", i as u64);
                Ok((format!("random{i:03}"), random_smooth_curve(grid, n_t, &mut rng)?))
            })
            .collect();
    }
    let entries = std::fs::read_dir(source).map_err(|e| LabError::Usage(format!("cannot read {source}: {e}")))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(LabError::Usage(format!("no curve files in {source}")));
    }
    files
        .iter()
        .map(|p| {
            let name = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            Ok((name, parse_curve_json(&read_input(p)?)?))
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
pub fn fund_check(
    cfg: &ExperimentConfig,
    dir: &mut ArtifactDir,
    curves: &str,
    d: usize,
    m: usize,
    n_t: usize,
    c_const: Option<f64>,
    alpha: Option<f64>,
) -> Result<Outcome> {
    let grid = TorusGrid::new(d, m)?;
    let curves = load_curves(curves, &grid, n_t, cfg.seed)?;
    let c_const = c_const.unwrap_or_else(|| default_constant(d));
    let mut failures = Vec::new();
    let mut rows = Vec::new();
    let mut worst = f64::INFINITY;
    dir.timed("fund-check", || {
        for (name, curve) in &curves {
            for &nu in &cfg.nu_list {
                match verify_fund_inequalities(curve, nu, c_const, alpha.unwrap_or(nu)) {
                    Ok(r) => {
                        let relative = r.min_slack() / (1.0 + r.action);
                        worst = worst.min(relative);
                        if !r.passes() {
                            failures.push(format!("{name}, nu = {nu}: min slack {:e} below -{:e}", r.min_slack(), r.eps_grid));
                        }
                        rows.push(vec![
                            name.clone(),
                            num(nu),
                            num(r.action),
                            num(r.action_reg),
                            num(r.lhs_w),
                            num(r.rhs_w),
                            num(r.lhs_u),
                            num(r.rhs_u),
                            num(r.slack_w),
                            num(r.slack_u),
                            num(r.slack_w_alpha),
                            num(r.slack_u_alpha),
                            num(r.eps_grid),
                            r.passes().to_string(),
                        ]);
                    }
                    Err(e) => failures.push(format!("{name}, nu = {nu}: {e}")),
                }
            }
        }
    });
    log::info!("fund-check: worst slack / (1 + A) = {worst:e}");
    let primary = dir.write_csv(
        "fund_report.csv",
        &[
            "curve", "nu", "action", "action_reg", "lhs_w", "rhs_w", "lhs_u", "rhs_u", "slack_w", "slack_u",
            "slack_w_alpha", "slack_u_alpha", "eps_grid", "passes",
        ],
        &rows,
    )?;
    Ok(Outcome { primary, failures })
}

/// Seeded smooth test paths `x0 + v t + a sin 2πt` (lifted, then wrapped).
pub fn test_paths(d: usize, n: usize, count: usize, seed: u64) -> Result<Vec<DiscretePath>> {
    (0..count)
        .map(|i| {
            let mut rng = stream_rng(seed, "test-paths", i as u64);
            let mut x0 = [0.0; 2];
            let mut v = [0.0; 2];
            let mut a = [0.0; 2];
            for k in 0..d {
                x0[k] = rng.random_range(0.0..1.0);
                v[k] = rng.random_range(-0.6..0.6);
                a[k] = rng.random_range(-0.15..0.15);
            }
            let lift = (0..=n)
                .map(|j| {
                    let t = j as f64 / n as f64;
                    let mut p = [0.0; 2];
                    for k in 0..d {
                        p[k] = x0[k] + v[k] * t + a[k] * (2.0 * PI * t).sin();
                    }
                    p
                })
                .collect();
            Ok(DiscretePath::from_lift(d, lift)?)
        })
        .collect()
}

/// Seeded loops `Σ_j a_j sin(π j t)`, exactly zero at both ends.
pub fn test_loops(d: usize, n: usize, count: usize, seed: u64) -> Vec<Vec<[f64; 2]>> {
    (0..count)
        .map(|i| {
            let mut rng = stream_rng(seed, "test-loops", i as u64);
            let amps: Vec<[f64; 2]> = (0..3)
                .map(|_| [rng.random_range(-0.3..0.3), if d == 2 { rng.random_range(-0.3..0.3) } else { 0.0 }])
                .collect();
            (0..=n)
                .map(|j| {
                    if j == 0 || j == n {
                        return [0.0; 2];
                    }
                    let t = j as f64 / n as f64;
                    let mut p = [0.0; 2];
                    for (k, a) in amps.iter().enumerate() {
                        let s = (PI * (k + 1) as f64 * t).sin();
                        p[0] += a[0] * s;
                        p[1] += a[1] * s;
                    }
                    p
                })
                .collect()
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
pub fn paths(
    cfg: &ExperimentConfig,
    dir: &mut ArtifactDir,
    check: PathCheck,
    d: usize,
    n: usize,
    samples: usize,
    count: usize,
) -> Result<Outcome> {
    let mut failures = Vec::new();
    let mut rows = Vec::new();
    let header: &[&str] = match check {
        PathCheck::AnMoment => {
            dir.timed("an-moment", || -> Result<()> {
                for &nu in &cfg.nu_list {
                    for a in 1..=9 {
                        let alpha = a as f64 / 10.0;
                        let r = exp_moment_check(alpha, nu, n, &MomentMode::Reversible { d })?;
                        let holds = r.lhs <= r.rhs * (1.0 + MOMENT_TOL);
                        if !holds {
                            failures.push(format!("alpha = {alpha}, nu = {nu}: {:e} > {:e}", r.lhs, r.rhs));
                        }
                        rows.push(vec![num(alpha), num(nu), n.to_string(), num(r.lhs), num(r.rhs), num(r.ratio), holds.to_string()]);
                    }
                }
                Ok(())
            })?;
            &["alpha", "nu", "n", "lhs", "rhs", "ratio", "holds"]
        }
        PathCheck::CameronMartin => {
            let loops = test_loops(d, n, count, cfg.seed);
            let nus = if cfg.nu_list.is_empty() { vec![1.0] } else { cfg.nu_list.clone() };
            dir.timed("cameron-martin", || -> Result<()> {
                for (i, lp) in loops.iter().enumerate() {
                    for &nu in &nus {
                        let cm = cameron_martin_entropy(lp, d, nu)?;
                        let scaled = nu * cm.exact_entropy;
                        let err = (scaled - cm.half_action).abs();
                        if err > CAMERON_MARTIN_TOL {
                            failures.push(format!("loop {i}, nu = {nu}: |nu H - A/2| = {err:e}"));
                        }
                        rows.push(vec![i.to_string(), num(nu), num(scaled), num(cm.half_action), num(err)]);
                    }
                }
                Ok(())
            })?;
            &["loop", "nu", "nu_entropy", "half_action", "abs_error"]
        }
        PathCheck::BridgeEntropy => {
            let grid = TorusGrid::new(d, BRIDGE_CONSTANT_CELLS)?;
            let list = test_paths(d, n, count, cfg.seed)?;
            dir.timed("bridge-entropy", || {
                for (i, path) in list.iter().enumerate() {
                    for (j, &nu) in cfg.nu_list.iter().enumerate() {
                        let stream_seed = cfg.seed.wrapping_add((i * cfg.nu_list.len() + j) as u64);
                        match torus_bridge_entropy_check(path, nu, samples, stream_seed, &grid) {
                            Ok(r) => {
                                if !r.holds() {
                                    failures.push(format!("path {i}, nu = {nu}: {:e} > {:e} + 3 * {:e}", r.estimate, r.bound, r.ci));
                                }
                                rows.push(vec![
                                    i.to_string(),
                                    num(nu),
                                    samples.to_string(),
                                    num(r.estimate),
                                    num(r.ci),
                                    num(r.action_an),
                                    num(r.dist_sq),
                                    num(r.c_emp),
                                    num(r.bound),
                                    r.holds().to_string(),
                                ]);
                            }
                            Err(e) => failures.push(format!("path {i}, nu = {nu}: {e}")),
                        }
                    }
                }
            });
            &["path", "nu", "samples", "estimate", "ci", "action_an", "dist_sq", "c_emp", "bound", "holds"]
        }
        PathCheck::Recovery => {
            let list = test_paths(d, n, count, cfg.seed)?;
            let w = 1.0 / count as f64;
            let weighted: Vec<(f64, DiscretePath)> = list.iter().map(|p| (w, p.clone())).collect();
            if samples < count {
                return Err(LabError::Usage(format!("recovery needs at least {count} samples")));
            }
            dir.timed("recovery", || -> Result<()> {
                for &nu in &cfg.nu_list {
                    let flow = build_recovery_flow(&weighted, nu, samples, cfg.seed)?;
                    let total: f64 = flow.iter().map(|p| p.0).sum();
                    if (total - 1.0).abs() > 1e-12 {
                        failures.push(format!("nu = {nu}: total weight {total}"));
                    }
                    // children are emitted parent by parent, with equal shares
                    let mut rest = flow.as_slice();
                    for (i, parent) in list.iter().enumerate() {
                        let start = parent.start();
                        let end = parent.end();
                        let k = rest
                            .iter()
                            .take_while(|c| geodesic_dist(c.1.start(), start) <= 1e-12 && geodesic_dist(c.1.end(), end) <= 1e-12)
                            .count();
                        if k == 0 {
                            failures.push(format!("nu = {nu}: path {i} has no children with its endpoints"));
                            break;
                        }
                        let (children, tail) = rest.split_at(k);
                        rest = tail;
                        let weight: f64 = children.iter().map(|c| c.0).sum();
                        let mean: f64 = children.iter().map(|c| discrete_action_an(&c.1)).sum::<f64>() / k as f64;
                        rows.push(vec![
                            i.to_string(),
                            num(nu),
                            k.to_string(),
                            num(weight),
                            num(discrete_action_an(parent)),
                            num(mean),
                        ]);
                    }
                    if !rest.is_empty() {
                        failures.push(format!("nu = {nu}: {} children do not match a parent's endpoints", rest.len()));
                    }
                }
                Ok(())
            })?;
            &["path", "nu", "children", "weight", "parent_action", "mean_child_action"]
        }
    };
    let primary = dir.write_csv(&format!("{}.csv", check.name()), header, &rows)?;
    Ok(Outcome { primary, failures })
}

pub fn load_coupling(spec: &str, m: usize) -> Result<Vec<f64>> {
    match spec {
        "identity" => Ok(identity_coupling(m)),
        "antipodal" => Ok(antipodal_coupling(m)),
        other => {
            let path = other
                .strip_prefix("file:")
                .ok_or_else(|| LabError::Usage(format!("unknown coupling '{other}'")))?;
            let (side, gamma) = parse_coupling_csv(&read_input(path.as_ref())?)?;
            if side != m {
                return Err(LabError::Usage(format!("coupling in {path} is {side}x{side}, expected {m}x{m}")));
            }
            Ok(gamma)
        }
    }
}

/// Flags a sequence that should not increase as `ν` decreases.
fn monotone_failures(label: &str, mut points: Vec<(f64, f64)>, strict: bool) -> Vec<String> {
    points.sort_by(|a, b| b.0.total_cmp(&a.0));
    points
        .windows(2)
        .filter(|w| if strict { w[1].1 >= w[0].1 } else { w[1].1 > w[0].1 * (1.0 + 1e-9) + 1e-12 })
        .map(|w| format!("{label} at nu = {} ({:e}) vs nu = {} ({:e})", w[1].0, w[1].1, w[0].0, w[0].1))
        .collect()
}

pub fn flows(cfg: &ExperimentConfig, dir: &mut ArtifactDir, m: usize, n: usize, gamma: &str) -> Result<Outcome> {
    let gamma = load_coupling(gamma, m)?;
    let lattice = PathLattice::new(m, n)?;
    let opts = BroOptions {
        tol: cfg.tol,
        max_iter: MAX_ITER,
        init_seed: None,
    };
    let rows = dir.timed("flows", || gamma_convergence_flows(&gamma, &cfg.nu_list, &lattice, &opts))?;
    let mut failures = Vec::new();
    let residual_cap = cfg.tol.max(1e-8);
    for r in &rows {
        if let Some(e) = &r.error {
            failures.push(format!("nu = {}: {e}", r.nu));
            continue;
        }
        if r.residual > residual_cap {
            failures.push(format!("nu = {}: constraint residual {:e}", r.nu, r.residual));
        }
        if r.gap <= 0.0 {
            failures.push(format!("nu = {}: nonpositive gap {:e}", r.nu, r.gap));
        }
    }
    let good = rows.iter().filter(|r| r.error.is_none()).map(|r| (r.nu, r.gap)).collect();
    failures.extend(monotone_failures("gap increases", good, false));
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                num(r.nu),
                num(r.bro_cost),
                num(r.reu_opt),
                num(r.gap),
                num(r.residual),
                r.iterations.to_string(),
                num(r.static_cost),
                num(r.ot_cost),
                r.error.clone().unwrap_or_default(),
            ]
        })
        .collect();
    let primary = dir.write_csv(
        "flows.csv",
        &["nu", "bro_cost", "reu_opt", "gap", "residual", "iterations", "static_cost", "ot_cost", "error"],
        &table,
    )?;
    Ok(Outcome { primary, failures })
}

/// Test functions paired with the pressure.
pub fn pressure_test_functions(grid: &TorusGrid, n_t: usize) -> Vec<Vec<Vec<f64>>> {
    vec![
        test_function(grid, n_t, |t, x| (2.0 * PI * x[0]).sin() * (PI * t).sin()),
        test_function(grid, n_t, |t, x| (2.0 * PI * x[0]).cos() * (PI * t).sin()),
        test_function(grid, n_t, |t, x| (4.0 * PI * x[0]).sin() * (2.0 * PI * t).sin()),
    ]
}

#[derive(Serialize)]
struct PressureArtifact<'a> {
    nu: f64,
    pressure: &'a brodinger_core::multiphase::PressureField,
    audit: &'a brodinger_core::multiphase::PressureAudit,
}

#[derive(Serialize)]
struct MultiphaseSummary {
    c_emp: Vec<f64>,
    last_relative_change: Vec<f64>,
    mreu: Option<brodinger_core::multiphase::MreuEstimate>,
}

pub fn multiphase(cfg: &ExperimentConfig, dir: &mut ArtifactDir, phases: &str, n_t: usize) -> Result<Outcome> {
    let phases = load_phases(phases)?;
    let grid = phases[0].start.grid();
    let opts = MbroOptions {
        n_t,
        tol: cfg.tol,
        max_iter: MAX_ITER,
    };
    let phis = pressure_test_functions(&grid, n_t);
    let incompressibility_cap = 100.0 * cfg.tol;
    let mut failures = Vec::new();
    // (nu, pairings, plan row fields)
    let mut solved = Vec::new();
    let mut profile_rows = Vec::new();
    for (i, &nu) in cfg.nu_list.iter().enumerate() {
        let res = dir.timed(&format!("multiphase nu={nu}"), || -> Result<_> {
            let plan = solve_mbro(&phases, nu, &opts)?;
            let pressure = raw_pressure(&plan);
            let audit = audit_pressure(&plan, &pressure, cfg.seed)?;
            let pairings = phis.iter().map(|phi| pressure.pairing(phi)).collect::<brodinger_core::Result<Vec<_>>>()?;
            Ok((plan, pressure, audit, pairings))
        });
        let (plan, pressure, audit, pairings) = match res {
            Ok(v) => v,
            Err(e) => {
                failures.push(format!("nu = {nu}: {e}"));
                continue;
            }
        };
        if plan.incompressibility > incompressibility_cap {
            failures.push(format!("nu = {nu}: incompressibility {:e}", plan.incompressibility));
        }
        if !audit.passes() {
            failures.push(format!("nu = {nu}: pressure audit min slack {:e}", audit.min_slack()));
        }
        dir.write_json(&format!("plan_{i:02}.json"), &plan)?;
        dir.write_json(&format!("pressure_{i:02}.json"), &PressureArtifact { nu, pressure: &pressure, audit: &audit })?;
        let prof = average_entropy_profile(&plan);
        for (node, h) in prof.profile.iter().enumerate() {
            profile_rows.push(vec![num(nu), node.to_string(), num(node as f64 / n_t as f64), num(*h), num(prof.min_second_difference)]);
        }
        solved.push((nu, pairings, plan.total_cost, plan.kinetic, plan.path_cost, plan.incompressibility, audit, plan.iterations));
    }
    let c_emp: Vec<f64> = (0..phis.len())
        .map(|j| solved.iter().map(|s| s.1[j].abs() / (1.0 + s.0 * s.0)).fold(0.0, f64::max))
        .collect();
    let last_relative_change = (0..phis.len())
        .map(|j| match solved.as_slice() {
            [.., a, b] => relative_change(a.1[j], b.1[j]),
            _ => f64::NAN,
        })
        .collect();
    let mut rows = Vec::new();
    for (nu, pairings, total, kinetic, path_cost, incompressibility, audit, iterations) in &solved {
        for (j, p) in pairings.iter().enumerate() {
            rows.push(vec![
                num(*nu),
                PHI_NAMES[j].to_string(),
                num(*p),
                num(c_emp[j] * (1.0 + nu * nu)),
                num(*total),
                num(*kinetic),
                num(*path_cost),
                num(*incompressibility),
                num(audit.min_slack()),
                audit.passes().to_string(),
                iterations.to_string(),
            ]);
        }
    }
    let primary = dir.write_csv(
        "pairings.csv",
        &[
            "nu", "phi", "pairing", "bound", "total_cost", "kinetic", "path_cost", "incompressibility",
            "audit_min_slack", "audit_passed", "iterations",
        ],
        &rows,
    )?;
    dir.write_csv("entropy_profile.csv", &["nu", "node", "t", "entropy", "min_second_difference"], &profile_rows)?;
    let points: Vec<(f64, f64, f64)> = solved.iter().map(|s| (s.0, s.2, s.3)).collect();
    let mreu = if points.len() >= 2 { mreu_from_points(points).ok() } else { None };
    dir.write_json(
        "summary.json",
        &MultiphaseSummary {
            c_emp,
            last_relative_change,
            mreu,
        },
    )?;
    Ok(Outcome { primary, failures })
}

/// `(label, ν, profile)` for bridges between two densities.
pub fn bridge_profiles(
    r0: &brodinger_core::GridDensity,
    r1: &brodinger_core::GridDensity,
    nus: &[f64],
    n_t: usize,
    tol: f64,
) -> Vec<(f64, brodinger_core::Result<ConvexityProfile>)> {
    nus.iter()
        .map(|&nu| {
            let prof = solve_schrodinger_system(r0, r1, nu, tol, MAX_ITER)
                .and_then(|pot| entropic_interpolation(&pot, n_t))
                .map(|b| entropy_convexity_profile(&b.curve));
            (nu, prof)
        })
        .collect()
}

pub fn plan_profiles(phases: &[Phase], nus: &[f64], opts: &MbroOptions) -> Vec<(f64, brodinger_core::Result<ConvexityProfile>)> {
    nus.iter()
        .map(|&nu| (nu, solve_mbro(phases, nu, opts).map(|p| average_entropy_profile(&p))))
        .collect()
}

pub fn convexity_holds(p: &ConvexityProfile) -> bool {
    p.min_second_difference >= -CONVEXITY_TOL * p.max_abs()
}

#[allow(clippy::too_many_arguments)]
pub fn convexity(
    cfg: &ExperimentConfig,
    dir: &mut ArtifactDir,
    rho0: &str,
    rho1: &str,
    m: usize,
    n_t: usize,
    phases: &str,
    mp_n_t: usize,
) -> Result<Outcome> {
    let grid = TorusGrid::line(m)?;
    let r0 = load_density(rho0, &grid)?;
    let r1 = load_density(rho1, &grid)?;
    let phases = load_phases(phases)?;
    let opts = MbroOptions {
        n_t: mp_n_t,
        tol: cfg.tol,
        max_iter: MAX_ITER,
    };
    let bridges = dir.timed("bridges", || bridge_profiles(&r0, &r1, &cfg.nu_list, n_t, cfg.tol));
    let plans = dir.timed("plans", || plan_profiles(&phases, &cfg.nu_list, &opts));
    let mut failures = Vec::new();
    let mut rows = Vec::new();
    let mut profile_rows = Vec::new();
    for (label, list) in [("bridge", bridges), ("multiphase", plans)] {
        for (nu, prof) in list {
            match prof {
                Ok(p) => {
                    let holds = convexity_holds(&p);
                    if !holds {
                        failures.push(format!("{label}, nu = {nu}: second difference {:e}", p.min_second_difference));
                    }
                    rows.push(vec![
                        label.to_string(),
                        num(nu),
                        num(p.min_second_difference),
                        num(p.max_abs()),
                        num(-CONVEXITY_TOL * p.max_abs()),
                        holds.to_string(),
                    ]);
                    let steps = p.profile.len() - 1;
                    for (node, h) in p.profile.iter().enumerate() {
                        profile_rows.push(vec![label.to_string(), num(nu), node.to_string(), num(node as f64 / steps as f64), num(*h)]);
                    }
                }
                Err(e) => failures.push(format!("{label}, nu = {nu}: {e}")),
            }
        }
    }
    let primary = dir.write_csv(
        "convexity.csv",
        &["instance", "nu", "min_second_difference", "max_abs", "threshold", "holds"],
        &rows,
    )?;
    dir.write_csv("profiles.csv", &["instance", "nu", "node", "t", "entropy"], &profile_rows)?;
    Ok(Outcome { primary, failures })
}

pub fn gamma_sweep(cfg: &ExperimentConfig, dir: &mut ArtifactDir, rho0: &str, rho1: &str, m: usize, n_t: usize) -> Result<Outcome> {
    let grid = TorusGrid::line(m)?;
    let r0 = load_density(rho0, &grid)?;
    let r1 = load_density(rho1, &grid)?;
    let opts = SweepOptions {
        n_t,
        tol: cfg.tol,
        max_iter: MAX_ITER,
        reference: None,
    };
    let rows = dir.timed("gamma-sweep", || gamma_sweep_sch(&r0, &r1, &cfg.nu_list, &opts))?;
    let mut failures = Vec::new();
    for r in &rows {
        if let Some(e) = &r.error {
            failures.push(format!("nu = {}: {e}", r.nu));
        } else if r.gap <= 0.0 {
            failures.push(format!("nu = {}: nonpositive gap {:e}", r.nu, r.gap));
        }
    }
    let good = rows.iter().filter(|r| r.error.is_none()).map(|r| (r.nu, r.gap)).collect();
    failures.extend(monotone_failures("gap does not decrease", good, true));
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                num(r.nu),
                num(r.h_nu),
                num(r.action),
                num(r.fisher),
                num(r.reference),
                num(r.gap),
                opt_num(r.envelope),
                r.iterations.to_string(),
                r.error.clone().unwrap_or_default(),
            ]
        })
        .collect();
    let primary = dir.write_csv(
        "gamma_sweep.csv",
        &["nu", "H_nu", "action", "fisher", "reference", "gap", "envelope", "iterations", "error"],
        &table,
    )?;
    Ok(Outcome { primary, failures })
}
