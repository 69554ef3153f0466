//! Schrödinger problem between two grid densities: log-domain alternating
//! scaling for the Schrödinger system, entropic interpolation, dynamic and
//! static costs, the small-noise sweep and entropy-convexity profiles.

use rayon::prelude::*;
use serde::Serialize;

use crate::curves::mccann_interpolant;
use crate::heat::{log_kernel_row, log_theta_kernel, LogHeat};
use crate::measures::{
    entropy, fisher_info, kinetic_action, kinetic_action_report, trapezoid, wasserstein2_circle,
    DensityCurve, GridDensity, VectorField,
};
use crate::regularizer::regularize_curve;
use crate::torus::TorusGrid;
use crate::{Error, Result};

/// Default stopping tolerance on both marginal L¹ errors.
pub const DEFAULT_TOL: f64 = 1e-9;

/// Largest grid for which dense couplings are materialized.
pub const DENSE_COUPLING_CAP: usize = 4096;

/// Solution `(f, g)` of the Schrödinger system, stored as logs of density
/// values: `f · (g * τ_ν) = ρ0` and `(f * τ_ν) · g = ρ1`.
#[derive(Clone, Debug, Serialize)]
pub struct SchrodingerPotentials {
    pub grid: TorusGrid,
    pub nu: f64,
    pub log_f: Vec<f64>,
    pub log_g: Vec<f64>,
    pub iterations: usize,
    /// Final L¹ errors of the two marginals (in mass).
    pub marginal_error: [f64; 2],
    pub tol: f64,
}

/// Solves the Schrödinger system by alternating log-domain scaling, starting
/// from `g ≡ 1`.
pub fn solve_schrodinger_system(
    rho0: &GridDensity,
    rho1: &GridDensity,
    nu: f64,
    tol: f64,
    max_iter: usize,
) -> Result<SchrodingerPotentials> {
    solve_schrodinger_system_from(rho0, rho1, nu, tol, max_iter, None)
}

/// Same as [`solve_schrodinger_system`] with an explicit initial `log g`.
pub fn solve_schrodinger_system_from(
    rho0: &GridDensity,
    rho1: &GridDensity,
    nu: f64,
    tol: f64,
    max_iter: usize,
    init_log_g: Option<&[f64]>,
) -> Result<SchrodingerPotentials> {
    let grid = rho0.grid();
    if rho1.grid() != grid {
        return Err(Error::GridMismatch("endpoint densities on different grids".into()));
    }
    if !(nu > 0.0) || !nu.is_finite() {
        return Err(Error::Domain(format!("diffusivity must be positive, got {nu}")));
    }
    if !(tol > 0.0) {
        return Err(Error::Domain(format!("tolerance must be positive, got {tol}")));
    }
    let hd = grid.cell_volume();
    let lh = LogHeat::new(grid);
    let u0 = rho0.values();
    let u1 = rho1.values();
    let l0: Vec<f64> = u0.iter().map(|u| u.ln()).collect();
    let l1: Vec<f64> = u1.iter().map(|u| u.ln()).collect();
    let mut lg = match init_log_g {
        Some(init) if init.len() == grid.len() => init.to_vec(),
        Some(_) => return Err(Error::GridMismatch("initial potential has the wrong length".into())),
        None => vec![0.0; grid.len()],
    };
    let mut history = Vec::new();
    for it in 1..=max_iter {
        let kg = lh.apply(&lg, nu);
        let lf = scale_update(&l0, &kg)?;
        let kf = lh.apply(&lf, nu);
        let err1 = l1_gap(&lg, &kf, &u1) * hd;
        if history.len() == 64 {
            history.remove(0);
        }
        history.push(err1);
        if err1 <= tol {
            let err0 = l1_gap(&lf, &kg, &u0) * hd;
            return Ok(SchrodingerPotentials {
                grid,
                nu,
                log_f: lf,
                log_g: lg,
                iterations: it,
                marginal_error: [err0, err1],
                tol,
            });
        }
        lg = scale_update(&l1, &kf)?;
    }
    let residual = history.last().copied().unwrap_or(f64::NAN);
    Err(Error::NoConvergence {
        iterations: max_iter,
        residual,
        history,
    })
}

/// `log ρ - log(K p)`, keeping empty cells empty; rejects non-finite output.
fn scale_update(target: &[f64], conv: &[f64]) -> Result<Vec<f64>> {
    target
        .iter()
        .zip(conv)
        .enumerate()
        .map(|(i, (&t, &c))| {
            if t == f64::NEG_INFINITY {
                return Ok(f64::NEG_INFINITY);
            }
            let v = t - c;
            if !v.is_finite() {
                return Err(Error::Underflow(format!(
                    "non-finite log potential at cell {i} (log-convolution {c})"
                )));
            }
            Ok(v)
        })
        .collect()
}

/// `Σ |exp(a + b) - u|` over cells.
fn l1_gap(a: &[f64], b: &[f64], u: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .zip(u)
        .map(|((x, y), t)| ((x + y).exp() - t).abs())
        .sum()
}

impl SchrodingerPotentials {
    /// Applies the gauge `f ↦ c f`, `g ↦ g / c`.
    pub fn regauged(&self, log_c: f64) -> Self {
        let mut out = self.clone();
        out.log_f.iter_mut().for_each(|v| *v += log_c);
        out.log_g.iter_mut().for_each(|v| *v -= log_c);
        out
    }

    /// Dense coupling `γ_ij = h^d f_i k(x_j - x_i) g_j` in mass, row-major
    /// over flat cell indices, with `k` the normalized grid heat kernel.
    pub fn coupling(&self) -> Result<Vec<f64>> {
        let n = self.grid.len();
        if n > DENSE_COUPLING_CAP {
            return Err(Error::Capacity {
                what: "dense coupling cells",
                size: n,
                cap: DENSE_COUPLING_CAP,
            });
        }
        let m = self.grid.cells_per_axis();
        let row = log_kernel_row(m, self.nu);
        let lhd = self.grid.cell_volume().ln();
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            let ii = self.grid.multi_index(i);
            for j in 0..n {
                let jj = self.grid.multi_index(j);
                let mut lk = 0.0;
                for a in 0..self.grid.dim() {
                    lk += row[(jj[a] + m - ii[a]) % m];
                }
                out[i * n + j] = (self.log_f[i] + lk + self.log_g[j] + lhd).exp();
            }
        }
        Ok(out)
    }
}

/// Curve of the entropic interpolation together with bookkeeping.
#[derive(Clone, Debug, Serialize)]
pub struct BridgeCurve {
    pub curve: DensityCurve,
    pub nu: f64,
    /// Largest `|Z_n - 1|` over nodes before renormalization.
    pub max_mass_defect: f64,
}

/// Nodes `ρ_t = (f * τ_{νt}) (g * τ_{ν(1-t)})`, renormalized to unit mass;
/// momenta from the current velocity `(ν/2) ∇ log(ψ/φ)` at half-steps, then
/// projected onto the discrete continuity equation.
pub fn entropic_interpolation(pot: &SchrodingerPotentials, n_t: usize) -> Result<BridgeCurve> {
    if n_t == 0 {
        return Err(Error::Domain("interpolation needs at least one time step".into()));
    }
    let grid = pot.grid;
    let h = grid.spacing();
    if pot.nu < 2.0 * h * h * n_t as f64 {
        log::warn!(
            "nu = {} is below 2 h^2 N_t = {}; the discrete kernel is close to a Dirac",
            pot.nu,
            2.0 * h * h * n_t as f64
        );
    }
    let lh = LogHeat::new(grid);
    let sp = lh.spectral().clone();
    let hd = grid.cell_volume();
    let at = |t: f64| -> (Vec<f64>, Vec<f64>) {
        (lh.apply(&pot.log_f, pot.nu * t), lh.apply(&pot.log_g, pot.nu * (1.0 - t)))
    };
    let mut densities = Vec::with_capacity(n_t + 1);
    let mut max_defect: f64 = 0.0;
    for n in 0..=n_t {
        let (lphi, lpsi) = at(n as f64 / n_t as f64);
        let vals: Vec<f64> = lphi.iter().zip(&lpsi).map(|(a, b)| (a + b).exp()).collect();
        let z: f64 = vals.iter().sum::<f64>() * hd;
        if !z.is_finite() || vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::Underflow(format!("non-finite interpolation at node {n}")));
        }
        max_defect = max_defect.max((z - 1.0).abs());
        densities.push(GridDensity::from_density_values(grid, vals)?);
    }
    if max_defect > 10.0 * pot.tol.max(1e-12) {
        return Err(Error::Consistency(format!(
            "interpolation mass defect {max_defect:e} exceeds 10 × tol"
        )));
    }
    let momenta = (0..n_t)
        .map(|n| {
            let (lphi, lpsi) = at((n as f64 + 0.5) / n_t as f64);
            let diff: Vec<f64> = lpsi.iter().zip(&lphi).map(|(a, b)| a - b).collect();
            let rho: Vec<f64> = lphi.iter().zip(&lpsi).map(|(a, b)| (a + b).exp()).collect();
            VectorField {
                components: sp
                    .gradient(&diff)
                    .into_iter()
                    .map(|g| g.iter().zip(&rho).map(|(gv, r)| 0.5 * pot.nu * gv * r).collect())
                    .collect(),
            }
        })
        .collect();
    let mut curve = DensityCurve::new(grid, densities, momenta)?;
    curve.project_momenta(&sp);
    Ok(BridgeCurve {
        curve,
        nu: pot.nu,
        max_mass_defect: max_defect,
    })
}

/// Kinetic action of the bridge evaluated straight from the potentials:
/// midpoint rule in time on `(1/2) ∫ |(ν/2) ∇ log(ψ/φ)|² ρ`, without any
/// discrete projection.
pub fn bridge_action_from_potentials(pot: &SchrodingerPotentials, n_t: usize) -> f64 {
    let lh = LogHeat::new(pot.grid);
    let sp = lh.spectral();
    let hd = pot.grid.cell_volume();
    let mut total = 0.0;
    for n in 0..n_t {
        let t = (n as f64 + 0.5) / n_t as f64;
        let lphi = lh.apply(&pot.log_f, pot.nu * t);
        let lpsi = lh.apply(&pot.log_g, pot.nu * (1.0 - t));
        let rho: Vec<f64> = lphi.iter().zip(&lpsi).map(|(a, b)| (a + b).exp()).collect();
        let z: f64 = rho.iter().sum::<f64>() * hd;
        let diff: Vec<f64> = lpsi.iter().zip(&lphi).map(|(a, b)| a - b).collect();
        let mut slice = 0.0;
        for g in sp.gradient(&diff) {
            slice += g
                .iter()
                .zip(&rho)
                .map(|(gv, r)| (0.5 * pot.nu * gv).powi(2) * r / z)
                .sum::<f64>();
        }
        total += 0.5 * slice * hd / n_t as f64;
    }
    total
}

/// Terms of `H_ν(ρ) = A(ρ) + ν² ∫ F(ρ_t) dt`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct HnuReport {
    pub action: f64,
    /// `∫ F(ρ_t) dt` by the trapezoid rule on nodes.
    pub fisher: f64,
    pub h_nu: f64,
}

pub fn evaluate_h_nu(curve: &DensityCurve, nu: f64) -> Result<HnuReport> {
    let rep = kinetic_action_report(curve);
    if rep.action.is_infinite() {
        return Err(Error::Domain(format!(
            "infinite action: {} cells carry momentum over empty density, first {:?}",
            rep.offender_count, rep.offenders
        )));
    }
    let f: Vec<f64> = curve.densities.iter().map(fisher_info).collect();
    let fisher = trapezoid(&f);
    Ok(HnuReport {
        action: rep.action,
        fisher,
        h_nu: rep.action + nu * nu * fisher,
    })
}

/// `ν H(γ | R^ν_{01}) = ν H(γ | Leb ⊗ Leb) - ν ∫ log τ_ν(y - x) dγ` for a dense
/// coupling given in mass, row-major over flat cells.
pub fn static_entropic_cost(gamma: &[f64], grid: &TorusGrid, nu: f64) -> Result<f64> {
    let n = grid.len();
    if gamma.len() != n * n {
        return Err(Error::GridMismatch(format!(
            "coupling has {} entries, expected {}",
            gamma.len(),
            n * n
        )));
    }
    if gamma.iter().any(|&v| !(v >= 0.0)) {
        return Err(Error::InvalidDensity("negative coupling entry".into()));
    }
    let total: f64 = gamma.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidDensity(format!("coupling mass {total}")));
    }
    let lref = (n as f64 * n as f64).ln();
    let d = grid.dim();
    let mut acc = 0.0;
    for i in 0..n {
        let xi = grid.center(i);
        for j in 0..n {
            let g = gamma[i * n + j];
            if g == 0.0 {
                continue;
            }
            let xj = grid.center(j);
            let diff: Vec<f64> = (0..d).map(|a| xj[a] - xi[a]).collect();
            acc += g * ((g.ln() + lref) - log_theta_kernel(nu, &diff)?);
        }
    }
    Ok(nu * acc)
}

/// One row of the small-noise sweep.
#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub nu: f64,
    pub h_nu: f64,
    pub action: f64,
    pub fisher: f64,
    pub reference: f64,
    pub gap: f64,
    /// `H_ν` of the heat-regularized displacement interpolation (an upper
    /// bound for the Schrödinger cost), when available.
    pub envelope: Option<f64>,
    pub iterations: usize,
    pub error: Option<String>,
}

/// Options for [`gamma_sweep_sch`].
#[derive(Clone, Debug)]
pub struct SweepOptions {
    pub n_t: usize,
    pub tol: f64,
    pub max_iter: usize,
    /// Transport cost to compare against; computed with
    /// [`wasserstein2_circle`] when absent (d = 1 only).
    pub reference: Option<f64>,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            n_t: 64,
            tol: DEFAULT_TOL,
            max_iter: 200_000,
            reference: None,
        }
    }
}

pub fn gamma_sweep_sch(
    rho0: &GridDensity,
    rho1: &GridDensity,
    nus: &[f64],
    opts: &SweepOptions,
) -> Result<Vec<SweepRow>> {
    let reference = match opts.reference {
        Some(r) => r,
        None => wasserstein2_circle(rho0, rho1)?,
    };
    let displacement = if rho0.grid().dim() == 1 {
        mccann_interpolant(rho0, rho1, opts.n_t)
            .map_err(|e| log::warn!("no displacement envelope: {e}"))
            .ok()
    } else {
        None
    };
    let rows = nus
        .par_iter()
        .map(|&nu| {
            let solved = solve_schrodinger_system(rho0, rho1, nu, opts.tol, opts.max_iter)
                .and_then(|pot| {
                    let bridge = entropic_interpolation(&pot, opts.n_t)?;
                    Ok((pot.iterations, evaluate_h_nu(&bridge.curve, nu)?))
                });
            let envelope = displacement.as_ref().and_then(|c| {
                regularize_curve(c, nu)
                    .and_then(|reg| evaluate_h_nu(&reg.curve, nu))
                    .ok()
                    .map(|r| r.h_nu)
            });
            match solved {
                Ok((iterations, rep)) => SweepRow {
                    nu,
                    h_nu: rep.h_nu,
                    action: rep.action,
                    fisher: rep.fisher,
                    reference,
                    gap: rep.h_nu - reference,
                    envelope,
                    iterations,
                    error: None,
                },
                Err(e) => SweepRow {
                    nu,
                    h_nu: f64::NAN,
                    action: f64::NAN,
                    fisher: f64::NAN,
                    reference,
                    gap: f64::NAN,
                    envelope,
                    iterations: 0,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    Ok(rows)
}

/// Entropy along a curve and its smallest interior second difference.
#[derive(Clone, Debug, Serialize)]
pub struct ConvexityProfile {
    pub profile: Vec<f64>,
    pub min_second_difference: f64,
}

impl ConvexityProfile {
    pub fn from_profile(profile: Vec<f64>) -> Self {
        let n = profile.len().saturating_sub(1).max(1);
        let inv_dt2 = (n * n) as f64;
        let min_second_difference = profile
            .windows(3)
            .map(|w| (w[2] - 2.0 * w[1] + w[0]) * inv_dt2)
            .fold(f64::INFINITY, f64::min);
        Self {
            profile,
            min_second_difference: if min_second_difference.is_finite() {
                min_second_difference
            } else {
                0.0
            },
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.profile.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }
}

pub fn entropy_convexity_profile(curve: &DensityCurve) -> ConvexityProfile {
    ConvexityProfile::from_profile(curve.densities.iter().map(entropy).collect())
}

/// Convenience: kinetic action of a bridge curve.
pub fn bridge_action(bridge: &BridgeCurve) -> f64 {
    kinetic_action(&bridge.curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curves::heat_flow_curve;
    use crate::heat::theta_1d;
    use crate::measures::continuity_residual;

    fn pair(m: usize) -> (GridDensity, GridDensity) {
        let g = TorusGrid::line(m).unwrap();
        (
            GridDensity::wrapped_gaussian(&g, &[0.3], 0.1).unwrap(),
            GridDensity::wrapped_gaussian(&g, &[0.6], 0.12).unwrap(),
        )
    }

    #[test]
    fn uniform_endpoints_give_flat_potentials() {
        let g = TorusGrid::line(32).unwrap();
        let u = GridDensity::uniform(&g);
        let pot = solve_schrodinger_system(&u, &u, 0.1, 1e-12, 100).unwrap();
        let spread = |v: &[f64]| v.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - v.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(spread(&pot.log_f) < 1e-12 && spread(&pot.log_g) < 1e-12);
        let b = entropic_interpolation(&pot, 8).unwrap();
        for d in &b.curve.densities {
            assert!(d.l1_distance(&u) < 1e-12);
        }
        let rep = evaluate_h_nu(&b.curve, 0.1).unwrap();
        assert!(rep.h_nu.abs() < 1e-10);
    }

    #[test]
    fn marginals_within_tolerance() {
        let (r0, r1) = pair(64);
        let pot = solve_schrodinger_system(&r0, &r1, 0.05, 1e-9, 100_000).unwrap();
        assert!(pot.marginal_error[0] <= 1e-9 && pot.marginal_error[1] <= 1e-9);
        let gamma = pot.coupling().unwrap();
        let n = 64;
        let mut e0 = 0.0;
        let mut e1 = 0.0;
        for i in 0..n {
            let row: f64 = gamma[i * n..(i + 1) * n].iter().sum();
            let col: f64 = (0..n).map(|j| gamma[j * n + i]).sum();
            e0 += (row - r0.mass()[i]).abs();
            e1 += (col - r1.mass()[i]).abs();
        }
        assert!(e0 <= 1e-9 && e1 <= 1e-9, "{e0} {e1}");
    }

    /// Plain matrix scaling with an explicit kernel matrix.
    fn dense_sinkhorn(r0: &GridDensity, r1: &GridDensity, nu: f64) -> Vec<f64> {
        let g = r0.grid();
        let n = g.len();
        let h = g.spacing();
        let k: Vec<f64> = (0..n * n)
            .map(|ij| theta_1d(nu, g.center(ij % n)[0] - g.center(ij / n)[0]) * h)
            .collect();
        let (p, q) = (r0.mass(), r1.mass());
        let mut a = vec![1.0; n];
        let mut b = vec![1.0; n];
        for _ in 0..20_000 {
            for i in 0..n {
                a[i] = p[i] / (0..n).map(|j| k[i * n + j] * b[j]).sum::<f64>();
            }
            for j in 0..n {
                b[j] = q[j] / (0..n).map(|i| k[i * n + j] * a[i]).sum::<f64>();
            }
        }
        (0..n * n).map(|ij| a[ij / n] * k[ij] * b[ij % n]).collect()
    }

    #[test]
    fn coupling_matches_dense_oracle() {
        let (r0, r1) = pair(32);
        let pot = solve_schrodinger_system(&r0, &r1, 0.1, 1e-13, 100_000).unwrap();
        let ours = pot.coupling().unwrap();
        let oracle = dense_sinkhorn(&r0, &r1, 0.1);
        let err = ours.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn gauge_leaves_everything_unchanged() {
        let (r0, r1) = pair(32);
        let pot = solve_schrodinger_system(&r0, &r1, 0.1, 1e-11, 100_000).unwrap();
        let other = pot.regauged(3.7);
        let a = pot.coupling().unwrap();
        let b = other.coupling().unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() <= 1e-12));
        let ca = entropic_interpolation(&pot, 8).unwrap().curve;
        let cb = entropic_interpolation(&other, 8).unwrap().curve;
        for (x, y) in ca.densities.iter().zip(&cb.densities) {
            assert!(x.l1_distance(y) < 1e-12);
        }
    }

    #[test]
    fn uniqueness_from_different_starts() {
        let (r0, r1) = pair(32);
        let a = solve_schrodinger_system(&r0, &r1, 0.08, 1e-12, 100_000).unwrap();
        let init: Vec<f64> = (0..32).map(|i| ((i * 13 % 7) as f64 - 3.0) * 0.4).collect();
        let b = solve_schrodinger_system_from(&r0, &r1, 0.08, 1e-12, 100_000, Some(&init)).unwrap();
        let (ca, cb) = (a.coupling().unwrap(), b.coupling().unwrap());
        assert!(ca.iter().zip(&cb).all(|(x, y)| (x - y).abs() <= 1e-8));
    }

    #[test]
    fn interpolation_endpoints_and_admissibility() {
        let (r0, r1) = pair(64);
        let pot = solve_schrodinger_system(&r0, &r1, 0.05, 1e-10, 100_000).unwrap();
        let b = entropic_interpolation(&pot, 16).unwrap();
        assert!(b.curve.densities[0].l1_distance(&r0) <= 1e-9);
        assert!(b.curve.densities[16].l1_distance(&r1) <= 1e-9);
        assert!(b.max_mass_defect <= 10.0 * 1e-10);
        assert!(continuity_residual(&b.curve) <= 1e-8);
    }

    #[test]
    fn time_reversal_swaps_the_curve() {
        let (r0, r1) = pair(48);
        let fwd = entropic_interpolation(&solve_schrodinger_system(&r0, &r1, 0.1, 1e-12, 100_000).unwrap(), 12).unwrap();
        let bwd = entropic_interpolation(&solve_schrodinger_system(&r1, &r0, 0.1, 1e-12, 100_000).unwrap(), 12).unwrap();
        for n in 0..=12 {
            assert!(fwd.curve.densities[n].l1_distance(&bwd.curve.densities[12 - n]) < 1e-8);
        }
    }

    #[test]
    fn action_matches_potential_evaluation() {
        let (r0, r1) = pair(64);
        let pot = solve_schrodinger_system(&r0, &r1, 0.1, 1e-11, 100_000).unwrap();
        let b = entropic_interpolation(&pot, 64).unwrap();
        let a = kinetic_action(&b.curve);
        let direct = bridge_action_from_potentials(&pot, 64);
        assert!((a - direct).abs() < 1e-4, "{a} vs {direct}");
        let rep = evaluate_h_nu(&b.curve, 0.1).unwrap();
        assert!(rep.h_nu >= rep.action);
    }

    #[test]
    fn dynamic_matches_static_cost() {
        let (r0, r1) = pair(64);
        for nu in [0.2, 0.1, 0.05] {
            let pot = solve_schrodinger_system(&r0, &r1, nu, 1e-11, 100_000).unwrap();
            let stat = static_entropic_cost(&pot.coupling().unwrap(), &r0.grid(), nu).unwrap();
            let dynamic = evaluate_h_nu(&entropic_interpolation(&pot, 64).unwrap().curve, nu).unwrap().h_nu
                + nu * 0.5 * (entropy(&r0) + entropy(&r1));
            assert!(((dynamic - stat) / stat).abs() < 0.02, "nu={nu}: {dynamic} vs {stat}");
        }
    }

    #[test]
    fn static_cost_examples() {
        let g = TorusGrid::line(16).unwrap();
        let n = 16;
        let nu = 0.1;
        let product = vec![1.0 / (n * n) as f64; n * n];
        let direct: f64 = (0..n * n)
            .map(|ij| -nu / (n * n) as f64 * theta_1d(nu, g.center(ij % n)[0] - g.center(ij / n)[0]).ln())
            .sum();
        assert!((static_entropic_cost(&product, &g, nu).unwrap() - direct).abs() < 1e-14);
        let floor = -nu * theta_1d(nu, 0.0).ln();
        assert!(static_entropic_cost(&product, &g, nu).unwrap() >= floor);
        let mut diag = vec![0.0; n * n];
        (0..n).for_each(|i| diag[i * n + i] = 1.0 / n as f64);
        let small = static_entropic_cost(&diag, &g, 1e-4).unwrap();
        let smaller = static_entropic_cost(&diag, &g, 1e-6).unwrap();
        assert!(smaller.abs() < small.abs() && smaller.abs() < 1e-4);
    }

    #[test]
    fn heat_flow_entropy_is_convex() {
        let g = TorusGrid::line(128).unwrap();
        let rho = GridDensity::wrapped_gaussian(&g, &[0.5], 0.04).unwrap();
        let prof = entropy_convexity_profile(&heat_flow_curve(&rho, 0.05, 32).unwrap());
        assert!(prof.min_second_difference >= -1e-6 * prof.max_abs());
        let flat = entropy_convexity_profile(&DensityCurve::constant(&GridDensity::uniform(&g), 4));
        assert_eq!(flat.min_second_difference, 0.0);
        assert!(flat.profile.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sweep_of_identical_endpoints_is_cheap() {
        let g = TorusGrid::line(64).unwrap();
        let rho = GridDensity::wrapped_gaussian(&g, &[0.5], 0.1).unwrap();
        let opts = SweepOptions {
            n_t: 16,
            ..SweepOptions::default()
        };
        let rows = gamma_sweep_sch(&rho, &rho, &[0.2, 0.1], &opts).unwrap();
        let h = entropy(&rho);
        for r in rows {
            assert!(r.error.is_none());
            // C ν slack with C = d/2
            assert!(r.gap <= r.nu * h + 0.5 * r.nu, "{r:?}");
            assert!(r.envelope.unwrap() >= r.h_nu - 1e-6);
        }
    }
}
