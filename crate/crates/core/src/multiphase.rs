//! Multiphase Brödinger problem with finitely many phases.
//!
//! Phase `k` (weight `w_k`) is a path measure `P^k` on the grid at times
//! `t_n = n/N_t`, absolutely continuous with respect to the discrete reversible
//! Brownian motion `R^ν` (uniform start, heat steps of length `ν/N_t`). The
//! optimizer has the form
//!
//! ```text
//! dP^k/dR^ν = f_k(ω_0) g_k(ω_N) Π_{0<n<N} b_n(ω_n)
//! ```
//!
//! where `f_k, g_k` fix the phase endpoints and the shared factors `b_n`
//! enforce `Σ_k w_k ρ^k_n = Leb`. The solver alternates exact projections on
//! these constraints in the log domain. The pressure is read off the shared
//! factors, `p_n = (ν/Δt) log b_n`, normalized to zero mean per slice.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::heat::{log_sum_exp, LogHeat};
use crate::measures::{entropy, DensityCurve, GridDensity};
use crate::rng::stream_rng;
use crate::schrodinger::{evaluate_h_nu, ConvexityProfile, HnuReport};
use crate::torus::TorusGrid;
use crate::{Error, Result};

/// Tolerance on the averaged endpoint data being Lebesgue.
pub const AVERAGE_TOL: f64 = 1e-10;

/// Perturbations used by the pressure audit.
pub const AUDIT_TRIALS: usize = 10;

/// Sup-norm of the audit perturbations.
pub const AUDIT_AMPLITUDE: f64 = 0.02;

/// One phase of the discrete endpoint law: weight and endpoint densities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub weight: f64,
    pub start: GridDensity,
    pub end: GridDensity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MbroOptions {
    /// Number of time steps `N_t`.
    pub n_t: usize,
    /// L1 tolerance on every constraint (mass units).
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for MbroOptions {
    fn default() -> Self {
        Self {
            n_t: 48,
            tol: 1e-9,
            max_iter: 200_000,
        }
    }
}

/// Log potentials of the product form.
#[derive(Clone, Debug, PartialEq)]
pub struct Potentials {
    pub log_f: Vec<Vec<f64>>,
    pub log_g: Vec<Vec<f64>>,
    /// Shared `log b_n`, `n = 1..N_t-1`.
    pub log_b: Vec<Vec<f64>>,
}

/// Converged multiphase plan.
#[derive(Clone, Debug, Serialize)]
pub struct DiscreteTrafficPlan {
    pub grid: TorusGrid,
    pub nu: f64,
    pub phases: Vec<Phase>,
    pub options: MbroOptions,
    pub curves: Vec<DensityCurve>,
    /// `A + ν² ∫F` per phase.
    pub phase_costs: Vec<HnuReport>,
    /// `Σ w_k H_ν(ρ^k)`.
    pub total_cost: f64,
    /// `Σ w_k A(ρ^k)`.
    pub kinetic: f64,
    /// `ν H(P^k | R^ν)` per phase.
    pub path_costs: Vec<f64>,
    /// `Σ w_k ν H(P^k | R^ν)`, the objective the solver minimizes.
    pub path_cost: f64,
    /// `max_n ‖Σ_k w_k ρ^k_n - Leb‖₁`.
    pub incompressibility: f64,
    /// Largest deviation of a phase mass from one.
    pub mass_defect: f64,
    pub iterations: usize,
    #[serde(skip)]
    pub potentials: Potentials,
}

fn validate_phases(phases: &[Phase]) -> Result<TorusGrid> {
    let first = phases.first().ok_or_else(|| Error::Constraint("no phases given".into()))?;
    let grid = first.start.grid();
    let mut wsum = 0.0;
    for (k, ph) in phases.iter().enumerate() {
        if !(ph.weight > 0.0 && ph.weight.is_finite()) {
            return Err(Error::Constraint(format!("phase {k} has weight {}", ph.weight)));
        }
        if ph.start.grid() != grid || ph.end.grid() != grid {
            return Err(Error::GridMismatch(format!("phase {k} lives on another grid")));
        }
        wsum += ph.weight;
    }
    if (wsum - 1.0).abs() > AVERAGE_TOL {
        return Err(Error::Constraint(format!("phase weights sum to {wsum}")));
    }
    let u = 1.0 / grid.len() as f64;
    for (name, pick) in [("initial", 0), ("final", 1)] {
        let worst = (0..grid.len())
            .map(|i| {
                let avg: f64 = phases
                    .iter()
                    .map(|p| p.weight * if pick == 0 { p.start.mass()[i] } else { p.end.mass()[i] })
                    .sum();
                (avg - u).abs()
            })
            .fold(0.0, f64::max);
        if worst > AVERAGE_TOL {
            return Err(Error::Constraint(format!(
                "{name} phase average is not Lebesgue (deviation {worst:e})"
            )));
        }
    }
    Ok(grid)
}

fn ln_all(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| x.ln()).collect()
}

/// State of one run of the scaling iterations.
struct Scaling<'a> {
    heat: &'a LogHeat,
    step: f64,
    /// Exact log-domain convolution only; the spectral multiplier and the
    /// sampled kernel are different operators when the step is under-resolved.
    dense: bool,
    n_t: usize,
    weights: Vec<f64>,
    log_start: Vec<Vec<f64>>,
    log_end: Vec<Vec<f64>>,
    /// Target log mass of the phase average at interior times.
    log_target: Vec<Vec<f64>>,
    target: Vec<Vec<f64>>,
    pot: Potentials,
}

struct Converged {
    pot: Potentials,
    /// Log marginals `log ρ^k_n`, phase-major.
    log_marg: Vec<Vec<Vec<f64>>>,
    iterations: usize,
}

impl Scaling<'_> {
    fn apply(&self, field: &[f64]) -> Vec<f64> {
        if self.dense {
            self.heat.apply_dense(field, self.step)
        } else {
            self.heat.apply(field, self.step)
        }
    }

    /// `β^k_n`: log mass of the future of each cell, excluding time `n` itself.
    fn backward(&self, k: usize) -> Vec<Vec<f64>> {
        let n_t = self.n_t;
        let len = self.log_start[k].len();
        let mut beta = vec![vec![0.0; len]; n_t + 1];
        for n in (0..n_t).rev() {
            let pot = if n + 1 == n_t { &self.pot.log_g[k] } else { &self.pot.log_b[n] };
            let field: Vec<f64> = beta[n + 1].iter().zip(pot).map(|(b, p)| b + p).collect();
            beta[n] = self.apply(&field);
        }
        beta
    }

    fn run(mut self, max_iter: usize, tol: f64) -> Result<Converged> {
        let phases = self.weights.len();
        let n_t = self.n_t;
        let len = self.log_start[0].len();
        let log_u = -(len as f64).ln();
        let mut alpha: Vec<Vec<Vec<f64>>> = Vec::new();
        let mut history = Vec::new();
        for iter in 1..=max_iter {
            let beta: Vec<Vec<Vec<f64>>> = (0..phases).into_par_iter().map(|k| self.backward(k)).collect();
            if !alpha.is_empty() {
                let log_marg: Vec<Vec<Vec<f64>>> = (0..phases)
                    .map(|k| {
                        (0..=n_t)
                            .map(|n| alpha[k][n].iter().zip(&beta[k][n]).map(|(a, b)| a + b).collect())
                            .collect()
                    })
                    .collect();
                let residual = self.residual(&log_marg);
                if !residual.is_finite() {
                    return Err(Error::Underflow("multiphase potentials lost precision".into()));
                }
                if iter % 50 == 0 {
                    history.push(residual);
                }
                if residual <= tol {
                    return Ok(Converged {
                        pot: self.pot,
                        log_marg,
                        iterations: iter - 1,
                    });
                }
            }
            // initial endpoint of each phase
            let mut next: Vec<Vec<Vec<f64>>> = (0..phases)
                .map(|k| {
                    self.pot.log_f[k] = self.log_start[k]
                        .iter()
                        .zip(&beta[k][0])
                        .map(|(r, b)| r - log_u - b)
                        .collect();
                    let a0: Vec<f64> = self.log_start[k].iter().zip(&beta[k][0]).map(|(r, b)| r - b).collect();
                    vec![a0]
                })
                .collect();
            // interior times, shared factor
            for n in 1..n_t {
                let heated: Vec<Vec<f64>> = next.par_iter().map(|a| self.apply(&a[n - 1])).collect();
                let mut terms = vec![0.0; phases];
                let lb: Vec<f64> = (0..len)
                    .map(|i| {
                        for k in 0..phases {
                            terms[k] = self.weights[k].ln() + heated[k][i] + beta[k][n][i];
                        }
                        self.log_target[n - 1][i] - log_sum_exp(&terms)
                    })
                    .collect();
                for (a, h) in next.iter_mut().zip(heated) {
                    a.push(h.iter().zip(&lb).map(|(x, y)| x + y).collect());
                }
                self.pot.log_b[n - 1] = lb;
            }
            // final endpoint
            let heated: Vec<Vec<f64>> = next.par_iter().map(|a| self.apply(&a[n_t - 1])).collect();
            for (k, h) in heated.into_iter().enumerate() {
                self.pot.log_g[k] = self.log_end[k].iter().zip(&h).map(|(r, x)| r - x).collect();
                next[k].push(self.log_end[k].clone());
            }
            alpha = next;
        }
        Err(Error::NoConvergence {
            iterations: max_iter,
            residual: history.last().copied().unwrap_or(f64::INFINITY),
            history,
        })
    }

    fn residual(&self, log_marg: &[Vec<Vec<f64>>]) -> f64 {
        let mut worst: f64 = 0.0;
        let l1 = |a: &[f64], target: &[f64]| a.iter().zip(target).map(|(x, y)| (x.exp() - y).abs()).sum::<f64>();
        for (k, marg) in log_marg.iter().enumerate() {
            let start: Vec<f64> = self.log_start[k].iter().map(|v| v.exp()).collect();
            worst = worst.max(l1(&marg[0], &start));
        }
        for n in 1..self.n_t {
            let avg: Vec<f64> = (0..self.target[0].len())
                .map(|i| log_marg.iter().zip(&self.weights).map(|(m, w)| w * m[n][i].exp()).sum::<f64>())
                .collect();
            worst = worst.max(avg.iter().zip(&self.target[n - 1]).map(|(a, t)| (a - t).abs()).sum());
        }
        worst
    }
}

/// Solves with interior average marginals `target` (mass, `N_t - 1` slices),
/// warm-started from `init` when given.
fn solve_with_target(
    phases: &[Phase],
    nu: f64,
    opts: &MbroOptions,
    target: Option<Vec<Vec<f64>>>,
    init: Option<&Potentials>,
) -> Result<DiscreteTrafficPlan> {
    let grid = validate_phases(phases)?;
    if !(nu > 0.0 && nu.is_finite()) {
        return Err(Error::Domain(format!("diffusivity must be positive, got {nu}")));
    }
    if opts.n_t < 2 {
        return Err(Error::Domain("need at least two time steps".into()));
    }
    let len = grid.len();
    let n_t = opts.n_t;
    let target = target.unwrap_or_else(|| vec![vec![1.0 / len as f64; len]; n_t - 1]);
    if target.len() != n_t - 1 || target.iter().any(|t| t.len() != len || t.iter().any(|&v| !(v > 0.0))) {
        return Err(Error::Constraint("interior targets must be positive slices".into()));
    }
    let pot = match init {
        Some(p) => p.clone(),
        None => Potentials {
            log_f: vec![vec![0.0; len]; phases.len()],
            log_g: vec![vec![0.0; len]; phases.len()],
            log_b: vec![vec![0.0; len]; n_t - 1],
        },
    };
    let heat = LogHeat::new(grid);
    let step = nu / n_t as f64;
    let scaling = Scaling {
        heat: &heat,
        step,
        dense: step < 4.0 * grid.spacing().powi(2),
        n_t,
        weights: phases.iter().map(|p| p.weight).collect(),
        log_start: phases.iter().map(|p| ln_all(p.start.mass())).collect(),
        log_end: phases.iter().map(|p| ln_all(p.end.mass())).collect(),
        log_target: target.iter().map(|t| ln_all(t)).collect(),
        target,
        pot,
    };
    let done = scaling.run(opts.max_iter, opts.tol)?;
    assemble(grid, phases, nu, opts, done)
}

fn assemble(grid: TorusGrid, phases: &[Phase], nu: f64, opts: &MbroOptions, done: Converged) -> Result<DiscreteTrafficPlan> {
    let n_t = opts.n_t;
    let len = grid.len();
    let mut curves = Vec::with_capacity(phases.len());
    let mut path_costs = Vec::with_capacity(phases.len());
    let mut mass_defect: f64 = 0.0;
    for (k, marg) in done.log_marg.iter().enumerate() {
        let log_z = log_sum_exp(&marg[0]);
        let mut h = -log_z;
        let weight_of = |n: usize| -> &Vec<f64> {
            if n == 0 {
                &done.pot.log_f[k]
            } else if n == n_t {
                &done.pot.log_g[k]
            } else {
                &done.pot.log_b[n - 1]
            }
        };
        let mut nodes = Vec::with_capacity(n_t + 1);
        for (n, lm) in marg.iter().enumerate() {
            let mass: Vec<f64> = lm.iter().map(|v| v.exp()).collect();
            let total: f64 = mass.iter().sum();
            mass_defect = mass_defect.max((total - 1.0).abs());
            for (p, w) in mass.iter().zip(weight_of(n)) {
                if *p > 0.0 {
                    h += p / total * w;
                }
            }
            nodes.push(GridDensity::from_unnormalized(grid, mass)?);
        }
        path_costs.push(nu * h);
        curves.push(DensityCurve::from_densities(nodes)?);
    }
    let phase_costs = curves
        .iter()
        .map(|c| evaluate_h_nu(c, nu))
        .collect::<Result<Vec<_>>>()?;
    let weights: Vec<f64> = phases.iter().map(|p| p.weight).collect();
    let dot = |v: &mut dyn Iterator<Item = f64>| v.zip(&weights).map(|(a, w)| a * w).sum::<f64>();
    let total_cost = dot(&mut phase_costs.iter().map(|r| r.h_nu));
    let kinetic = dot(&mut phase_costs.iter().map(|r| r.action));
    let path_cost = dot(&mut path_costs.iter().copied());
    let u = 1.0 / len as f64;
    let incompressibility = (0..=n_t)
        .map(|n| {
            (0..len)
                .map(|i| (curves.iter().zip(&weights).map(|(c, w)| w * c.densities[n].mass()[i]).sum::<f64>() - u).abs())
                .sum::<f64>()
        })
        .fold(0.0, f64::max);
    Ok(DiscreteTrafficPlan {
        grid,
        nu,
        phases: phases.to_vec(),
        options: opts.clone(),
        curves,
        phase_costs,
        total_cost,
        kinetic,
        path_costs,
        path_cost,
        incompressibility,
        mass_defect,
        iterations: done.iterations,
        potentials: done.pot,
    })
}

/// Multiphase Brödinger optimum with incompressible phase average.
pub fn solve_mbro(phases: &[Phase], nu: f64, opts: &MbroOptions) -> Result<DiscreteTrafficPlan> {
    solve_with_target(phases, nu, opts, None, None)
}

/// Scalar field on the time-space grid, zero mean per slice, zero at `t = 0, 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PressureField {
    pub grid: TorusGrid,
    pub n_t: usize,
    /// `N_t + 1` slices of density-unit values.
    pub values: Vec<Vec<f64>>,
}

impl PressureField {
    /// `Σ_n Δt h^d Σ_i p_n(i) φ_n(i)`.
    pub fn pairing(&self, phi: &[Vec<f64>]) -> Result<f64> {
        if phi.len() != self.values.len() || phi.iter().any(|s| s.len() != self.grid.len()) {
            return Err(Error::GridMismatch("test field has the wrong shape".into()));
        }
        let w = self.grid.cell_volume() / self.n_t as f64;
        Ok(w * self
            .values
            .iter()
            .zip(phi)
            .map(|(p, f)| p.iter().zip(f).map(|(a, b)| a * b).sum::<f64>())
            .sum::<f64>())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()))
    }
}

/// Subtracts each slice's mean and zeroes the endpoint slices.
pub fn gauge_project(field: &mut [Vec<f64>]) {
    let last = field.len() - 1;
    for (n, slice) in field.iter_mut().enumerate() {
        if n == 0 || n == last {
            slice.iter_mut().for_each(|v| *v = 0.0);
            continue;
        }
        let mean = slice.iter().sum::<f64>() / slice.len() as f64;
        slice.iter_mut().for_each(|v| *v -= mean);
    }
}

/// Samples `f(t, x)` on the plan's time-space grid and gauge-projects it.
pub fn test_function(grid: &TorusGrid, n_t: usize, f: impl Fn(f64, [f64; 2]) -> f64) -> Vec<Vec<f64>> {
    let mut field: Vec<Vec<f64>> = (0..=n_t)
        .map(|n| {
            let t = n as f64 / n_t as f64;
            (0..grid.len()).map(|i| f(t, grid.center(i))).collect()
        })
        .collect();
    gauge_project(&mut field);
    field
}

/// One trial of the subgradient audit.
#[derive(Clone, Debug, Serialize)]
pub struct AuditTrial {
    /// Cost of the plan with average marginals `1 + φ`.
    pub perturbed_cost: f64,
    /// `cost + ⟨p, φ⟩`.
    pub linearization: f64,
    /// `perturbed_cost - linearization + ε`.
    pub slack: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct PressureAudit {
    pub epsilon: f64,
    pub trials: Vec<AuditTrial>,
}

impl PressureAudit {
    pub fn min_slack(&self) -> f64 {
        self.trials.iter().map(|t| t.slack).fold(f64::INFINITY, f64::min)
    }

    pub fn passes(&self) -> bool {
        self.min_slack() >= 0.0
    }
}

/// `(ν/Δt) log b_n` in the pressure gauge, without the subgradient audit.
pub fn raw_pressure(plan: &DiscreteTrafficPlan) -> PressureField {
    let n_t = plan.options.n_t;
    let len = plan.grid.len();
    let scale = plan.nu * n_t as f64;
    let mut values = vec![vec![0.0; len]; n_t + 1];
    for (n, lb) in plan.potentials.log_b.iter().enumerate() {
        values[n + 1] = lb.iter().map(|v| scale * v).collect();
    }
    gauge_project(&mut values);
    PressureField {
        grid: plan.grid,
        n_t,
        values,
    }
}

/// Smooth random field in the pressure gauge with sup-norm at most `amplitude`.
fn audit_perturbation<R: Rng>(grid: &TorusGrid, n_t: usize, amplitude: f64, rng: &mut R) -> Vec<Vec<f64>> {
    use std::f64::consts::PI;
    let d = grid.dim();
    let modes: Vec<(usize, [f64; 2], f64, f64)> = (0..6)
        .map(|_| {
            let k = rng.random_range(1..=3);
            let axis = [rng.random::<f64>(), rng.random::<f64>()];
            (k, axis, rng.random_range(-1.0..1.0), rng.random_range(0.0..1.0))
        })
        .collect();
    let time_mode = rng.random_range(1..=2) as f64;
    let mut field = test_function(grid, n_t, |t, x| {
        let space: f64 = modes
            .iter()
            .map(|&(k, dir, amp, phase)| {
                let arg: f64 = (0..d).map(|a| if dir[a] < 0.5 || d == 1 { x[a] } else { 0.0 }).sum();
                amp * (2.0 * PI * (k as f64 * arg + phase)).sin()
            })
            .sum();
        space * (PI * time_mode * t).sin()
    });
    let peak = field.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
    if peak > 0.0 {
        let s = amplitude * rng.random_range(0.5..1.0) / peak;
        field.iter_mut().flatten().for_each(|v| *v *= s);
    }
    field
}

/// First-order check that `p` is a subgradient of the optimal cost with
/// respect to the average marginal: re-solves with average `1 + φ` for random
/// small `φ`, warm-started from the plan.
pub fn audit_pressure(plan: &DiscreteTrafficPlan, pressure: &PressureField, seed: u64) -> Result<PressureAudit> {
    let epsilon = 1e-3 * plan.path_cost.abs() + 1e-8;
    let n_t = plan.options.n_t;
    let h = plan.grid.cell_volume();
    let fields: Vec<Vec<Vec<f64>>> = (0..AUDIT_TRIALS)
        .map(|j| {
            let mut rng = stream_rng(seed, "pressure-audit", j as u64);
            audit_perturbation(&plan.grid, n_t, AUDIT_AMPLITUDE, &mut rng)
        })
        .collect();
    let trials = fields
        .par_iter()
        .map(|phi| {
            let target: Vec<Vec<f64>> = phi[1..n_t].iter().map(|s| s.iter().map(|v| h * (1.0 + v)).collect()).collect();
            let q = solve_with_target(&plan.phases, plan.nu, &plan.options, Some(target), Some(&plan.potentials))?;
            let linearization = plan.path_cost + pressure.pairing(phi)?;
            Ok(AuditTrial {
                perturbed_cost: q.path_cost,
                linearization,
                slack: q.path_cost - linearization + epsilon,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PressureAudit { epsilon, trials })
}

/// Pressure of a converged plan, rejected if the subgradient audit fails.
pub fn extract_pressure(plan: &DiscreteTrafficPlan) -> Result<PressureField> {
    extract_pressure_seeded(plan, 0).map(|(p, _)| p)
}

pub fn extract_pressure_seeded(plan: &DiscreteTrafficPlan, seed: u64) -> Result<(PressureField, PressureAudit)> {
    let pressure = raw_pressure(plan);
    let audit = audit_pressure(plan, &pressure, seed)?;
    if !audit.passes() {
        return Err(Error::Audit(format!(
            "pressure is not a subgradient: min slack {:e} with epsilon {:e}",
            audit.min_slack(),
            audit.epsilon
        )));
    }
    Ok((pressure, audit))
}

/// Phase-averaged entropy along the plan.
pub fn average_entropy_profile(plan: &DiscreteTrafficPlan) -> ConvexityProfile {
    let n = plan.curves[0].densities.len();
    let profile = (0..n)
        .map(|i| {
            plan.curves
                .iter()
                .zip(&plan.phases)
                .map(|(c, p)| p.weight * entropy(&c.densities[i]))
                .sum()
        })
        .collect();
    ConvexityProfile::from_profile(profile)
}

/// One `ν` of the pressure sweep.
#[derive(Clone, Debug, Serialize)]
pub struct PressureRow {
    pub nu: f64,
    pub pairings: Vec<f64>,
    pub total_cost: f64,
    pub kinetic: f64,
    pub path_cost: f64,
    pub incompressibility: f64,
    pub audit_min_slack: f64,
    pub audit_passed: bool,
    pub iterations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct PressureSweep {
    pub rows: Vec<PressureRow>,
    /// `max_ν |⟨p^ν, φ_j⟩| / (1 + ν²)` over the sweep, per test function.
    pub c_emp: Vec<f64>,
    /// `|⟨p^{ν_last} - p^{ν_prev}, φ_j⟩| / |⟨p^{ν_last}, φ_j⟩|`, see [`relative_change`].
    pub last_relative_change: Vec<f64>,
    /// Whether successive pairing differences shrink along the sweep tail.
    pub tail_decreasing: Vec<bool>,
}

impl PressureSweep {
    /// Last-two relative change within `rel` for every test function.
    pub fn cauchy_within(&self, rel: f64) -> bool {
        self.last_relative_change.iter().all(|&c| c <= rel)
    }

    /// `|⟨p^ν, φ_j⟩| ≤ C_emp (1 + ν²)` on every row.
    pub fn bounded(&self) -> bool {
        self.rows.iter().filter(|r| r.error.is_none()).all(|r| {
            r.pairings
                .iter()
                .zip(&self.c_emp)
                .all(|(p, c)| p.abs() <= c * (1.0 + r.nu * r.nu) * (1.0 + 1e-12))
        })
    }

    pub fn audits_pass(&self) -> bool {
        self.rows.iter().all(|r| r.error.is_none() && r.audit_passed)
    }
}

/// Pairings below this are round-off (test functions the pressure is
/// orthogonal to by symmetry).
pub const PAIRING_FLOOR: f64 = 1e-12;

/// `|last - prev| / max(|last|, PAIRING_FLOOR)`.
pub fn relative_change(prev: f64, last: f64) -> f64 {
    (last - prev).abs() / last.abs().max(PAIRING_FLOOR)
}

/// Plans, pressures and pairings `⟨p^ν, φ_j⟩` along a sweep of `ν` (in the
/// order given, usually decreasing).
pub fn pressure_convergence(
    phases: &[Phase],
    nu_list: &[f64],
    test_functions: &[Vec<Vec<f64>>],
    opts: &MbroOptions,
    seed: u64,
) -> Result<PressureSweep> {
    validate_phases(phases)?;
    let rows: Vec<PressureRow> = nu_list
        .par_iter()
        .map(|&nu| {
            let row = solve_mbro(phases, nu, opts).and_then(|plan| {
                let pressure = raw_pressure(&plan);
                let audit = audit_pressure(&plan, &pressure, seed)?;
                let pairings = test_functions
                    .iter()
                    .map(|phi| pressure.pairing(phi))
                    .collect::<Result<Vec<_>>>()?;
                Ok(PressureRow {
                    nu,
                    pairings,
                    total_cost: plan.total_cost,
                    kinetic: plan.kinetic,
                    path_cost: plan.path_cost,
                    incompressibility: plan.incompressibility,
                    audit_min_slack: audit.min_slack(),
                    audit_passed: audit.passes(),
                    iterations: plan.iterations,
                    error: None,
                })
            });
            row.unwrap_or_else(|e| {
                log::warn!("pressure sweep row nu = {nu} failed: {e}");
                PressureRow {
                    nu,
                    pairings: vec![f64::NAN; test_functions.len()],
                    total_cost: f64::NAN,
                    kinetic: f64::NAN,
                    path_cost: f64::NAN,
                    incompressibility: f64::NAN,
                    audit_min_slack: f64::NAN,
                    audit_passed: false,
                    iterations: 0,
                    error: Some(e.to_string()),
                }
            })
        })
        .collect();
    let good: Vec<&PressureRow> = rows.iter().filter(|r| r.error.is_none()).collect();
    let j_count = test_functions.len();
    let c_emp = (0..j_count)
        .map(|j| good.iter().map(|r| r.pairings[j].abs() / (1.0 + r.nu * r.nu)).fold(0.0, f64::max))
        .collect();
    let last_relative_change = (0..j_count)
        .map(|j| match good.as_slice() {
            [.., a, b] => relative_change(a.pairings[j], b.pairings[j]),
            _ => f64::NAN,
        })
        .collect();
    let tail_decreasing = (0..j_count)
        .map(|j| {
            let diffs: Vec<f64> = good.windows(2).map(|w| (w[1].pairings[j] - w[0].pairings[j]).abs()).collect();
            diffs.windows(2).all(|w| w[1] <= w[0])
        })
        .collect();
    Ok(PressureSweep {
        rows,
        c_emp,
        last_relative_change,
        tail_decreasing,
    })
}

/// Small-noise extrapolation of the multiphase cost.
#[derive(Clone, Debug, Serialize)]
pub struct MreuEstimate {
    /// `(ν, 𝓗_ν, 𝓐)` per converged plan.
    pub points: Vec<(f64, f64, f64)>,
    pub intercept: f64,
    pub slope: f64,
    pub r_squared: f64,
    /// `|𝓐(P^ν) - intercept|` is nonincreasing as `ν` decreases (jitter `1e-6`).
    pub kinetic_approaches: bool,
}

/// Points used by the fit: the smallest three `ν`.
pub const MREU_TAIL: usize = 3;

/// Least-squares line through the tail of `(ν, total cost, kinetic)` points.
pub fn mreu_from_points(mut points: Vec<(f64, f64, f64)>) -> Result<MreuEstimate> {
    points.sort_by(|a, b| b.0.total_cmp(&a.0));
    if points.len() < 2 {
        return Err(Error::Domain("extrapolation needs at least two points".into()));
    }
    let tail = &points[points.len().saturating_sub(MREU_TAIL)..];
    let n = tail.len() as f64;
    let mx = tail.iter().map(|p| p.0).sum::<f64>() / n;
    let my = tail.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = tail.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = tail.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = tail.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let r_squared = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    if r_squared < 0.9 {
        log::warn!("multiphase extrapolation fits poorly (R² = {r_squared:.3})");
    }
    let kinetic_approaches = points
        .windows(2)
        .all(|w| (w[1].2 - intercept).abs() <= (w[0].2 - intercept).abs() + 1e-6);
    Ok(MreuEstimate {
        points,
        intercept,
        slope,
        r_squared,
        kinetic_approaches,
    })
}

/// Solves the sweep and extrapolates the total cost to `ν = 0`.
pub fn mreu_reference(phases: &[Phase], nu_list: &[f64], opts: &MbroOptions) -> Result<MreuEstimate> {
    let points = nu_list
        .par_iter()
        .map(|&nu| solve_mbro(phases, nu, opts).map(|p| (nu, p.total_cost, p.kinetic)))
        .collect::<Result<Vec<_>>>()?;
    mreu_from_points(points)
}

/// Two complementary bumps exchanged between two equal-weight phases:
/// `b(x) = 1 + 0.6 sin 2πx + 0.3 cos 4πx` and `2 - b`.
pub fn two_bump_exchange(grid: &TorusGrid) -> Result<Vec<Phase>> {
    use std::f64::consts::PI;
    if grid.dim() != 1 {
        return Err(Error::UnsupportedDimension(grid.dim()));
    }
    let bump = |x: f64| 1.0 + 0.6 * (2.0 * PI * x).sin() + 0.3 * (4.0 * PI * x).cos();
    let len = grid.len() as f64;
    let mass = |f: &dyn Fn(f64) -> f64| -> Vec<f64> { (0..grid.len()).map(|i| f(grid.center(i)[0]) / len).collect() };
    // exact complement so that the average is Lebesgue to round-off
    let a = mass(&bump);
    let b: Vec<f64> = a.iter().map(|v| 2.0 / len - v).collect();
    let a = GridDensity::from_unnormalized(*grid, a)?;
    let b = GridDensity::from_unnormalized(*grid, b)?;
    Ok(vec![
        Phase {
            weight: 0.5,
            start: a.clone(),
            end: b.clone(),
        },
        Phase {
            weight: 0.5,
            start: b,
            end: a,
        },
    ])
}
