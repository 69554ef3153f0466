//! Grid probability densities, curves of densities with momenta, and the
//! functionals evaluated on them.
//!
//! Masses `p_i` sum to one; the density with respect to normalized Lebesgue
//! measure is `u_i = p_i m^d`. Curves store densities at time nodes
//! `t_n = n Δt` and momenta (density times velocity, in density units) at the
//! half-steps `t_{n+1/2}`.

use serde::{Deserialize, Serialize};

use crate::heat::theta_1d;
use crate::spectral::{centered_difference, centered_divergence, Spectral};
use crate::torus::{wrap_scalar, TorusGrid};
use crate::{Error, Result};

/// Densities at or below this value are treated as empty inside action
/// quotients (stored masses are never floored).
pub const DENSITY_FLOOR: f64 = 1e-14;

/// Probability measure on a periodic grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDensity")]
pub struct GridDensity {
    grid: TorusGrid,
    mass: Vec<f64>,
}

#[derive(Deserialize)]
struct RawDensity {
    grid: TorusGrid,
    mass: Vec<f64>,
}

impl TryFrom<RawDensity> for GridDensity {
    type Error = Error;

    fn try_from(raw: RawDensity) -> Result<Self> {
        Self::new(raw.grid, raw.mass)
    }
}

impl GridDensity {
    /// Validates nonnegativity and unit mass (to `1e-12`).
    pub fn new(grid: TorusGrid, mass: Vec<f64>) -> Result<Self> {
        if mass.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} masses for a grid of {} cells",
                mass.len(),
                grid.len()
            )));
        }
        if let Some((i, v)) = mass.iter().enumerate().find(|(_, v)| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidDensity(format!("cell {i} has mass {v}")));
        }
        let total: f64 = mass.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidDensity(format!("total mass {total}")));
        }
        Ok(Self { grid, mass })
    }

    /// Normalizes a nonnegative, not identically zero mass vector.
    pub fn from_unnormalized(grid: TorusGrid, mut mass: Vec<f64>) -> Result<Self> {
        let total: f64 = mass.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::InvalidDensity(format!("cannot normalize total {total}")));
        }
        mass.iter_mut().for_each(|v| *v /= total);
        Self::new(grid, mass)
    }

    /// From density values `u_i` (with respect to normalized Lebesgue).
    pub fn from_density_values(grid: TorusGrid, values: Vec<f64>) -> Result<Self> {
        Self::from_unnormalized(grid, values)
    }

    /// Samples a nonnegative function at cell centers and normalizes.
    pub fn from_fn(grid: &TorusGrid, f: impl Fn([f64; 2]) -> f64) -> Result<Self> {
        Self::from_unnormalized(*grid, (0..grid.len()).map(|i| f(grid.center(i))).collect())
    }

    pub fn uniform(grid: &TorusGrid) -> Self {
        let n = grid.len();
        Self {
            grid: *grid,
            mass: vec![1.0 / n as f64; n],
        }
    }

    pub fn dirac(grid: &TorusGrid, cell: usize) -> Self {
        let mut mass = vec![0.0; grid.len()];
        mass[cell] = 1.0;
        Self { grid: *grid, mass }
    }

    /// Wrapped Gaussian with per-axis standard deviation `sigma`, sampled at
    /// cell centers and normalized.
    pub fn wrapped_gaussian(grid: &TorusGrid, center: &[f64], sigma: f64) -> Result<Self> {
        if center.len() != grid.dim() {
            return Err(Error::GridMismatch(format!(
                "center has {} coordinates on a d={} grid",
                center.len(),
                grid.dim()
            )));
        }
        if !(sigma > 0.0) {
            return Err(Error::Domain(format!("sigma must be positive, got {sigma}")));
        }
        let s = sigma * sigma;
        Self::from_fn(grid, |x| {
            (0..grid.dim()).map(|a| theta_1d(s, x[a] - center[a])).product()
        })
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn into_mass(self) -> Vec<f64> {
        self.mass
    }

    /// Density values `p_i m^d`.
    pub fn values(&self) -> Vec<f64> {
        let scale = self.grid.len() as f64;
        self.mass.iter().map(|p| p * scale).collect()
    }

    /// Translation by whole cells along each axis.
    pub fn shift(&self, cells: [isize; 2]) -> Self {
        let mut out = vec![0.0; self.mass.len()];
        for (i, &p) in self.mass.iter().enumerate() {
            let mut j = i;
            for a in 0..self.grid.dim() {
                j = self.grid.neighbor(j, a, cells[a]);
            }
            out[j] = p;
        }
        Self {
            grid: self.grid,
            mass: out,
        }
    }

    /// L¹ distance between two densities on the same grid (in mass).
    pub fn l1_distance(&self, other: &Self) -> f64 {
        self.mass.iter().zip(&other.mass).map(|(a, b)| (a - b).abs()).sum()
    }
}

/// Vector field stored by components, each a flat grid array.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VectorField {
    pub components: Vec<Vec<f64>>,
}

impl VectorField {
    pub fn zeros(grid: &TorusGrid) -> Self {
        Self {
            components: vec![vec![0.0; grid.len()]; grid.dim()],
        }
    }

    pub fn constant(grid: &TorusGrid, v: &[f64]) -> Self {
        Self {
            components: (0..grid.dim()).map(|a| vec![v[a]; grid.len()]).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn len(&self) -> usize {
        self.components.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `|v_i|²` per cell.
    pub fn norm_sq(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        for c in &self.components {
            for (o, v) in out.iter_mut().zip(c) {
                *o += v * v;
            }
        }
        out
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.components.iter_mut().zip(&other.components) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        self.components
            .iter_mut()
            .for_each(|comp| comp.iter_mut().for_each(|v| *v *= c));
    }

    pub fn max_abs(&self) -> f64 {
        self.components
            .iter()
            .flatten()
            .fold(0.0f64, |acc, v| acc.max(v.abs()))
    }
}

/// Curve of densities on nodes `t_n = n/N_t` with momenta at half-steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCurve")]
pub struct DensityCurve {
    pub grid: TorusGrid,
    pub densities: Vec<GridDensity>,
    /// Momentum densities `ρ c` at `t_{n+1/2}`, `n = 0..N_t`.
    pub momenta: Vec<VectorField>,
}

#[derive(Deserialize)]
struct RawCurve {
    grid: TorusGrid,
    densities: Vec<GridDensity>,
    momenta: Vec<VectorField>,
}

impl TryFrom<RawCurve> for DensityCurve {
    type Error = Error;

    fn try_from(raw: RawCurve) -> Result<Self> {
        if raw.momenta.iter().flat_map(|m| m.components.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::Parse("non-finite momentum".into()));
        }
        Self::new(raw.grid, raw.densities, raw.momenta)
    }
}

impl DensityCurve {
    pub fn new(grid: TorusGrid, densities: Vec<GridDensity>, momenta: Vec<VectorField>) -> Result<Self> {
        if densities.len() < 2 {
            return Err(Error::Domain("a curve needs at least two nodes".into()));
        }
        if momenta.len() + 1 != densities.len() {
            return Err(Error::GridMismatch(format!(
                "{} nodes need {} half-step momenta, got {}",
                densities.len(),
                densities.len() - 1,
                momenta.len()
            )));
        }
        for rho in &densities {
            if rho.grid() != grid {
                return Err(Error::GridMismatch("node density on a different grid".into()));
            }
        }
        for mom in &momenta {
            if mom.dim() != grid.dim() || mom.components.iter().any(|c| c.len() != grid.len()) {
                return Err(Error::GridMismatch("momentum field has the wrong shape".into()));
            }
        }
        Ok(Self {
            grid,
            densities,
            momenta,
        })
    }

    /// Constant curve with zero momentum.
    pub fn constant(rho: &GridDensity, n_t: usize) -> Self {
        let grid = rho.grid();
        Self {
            grid,
            densities: vec![rho.clone(); n_t + 1],
            momenta: vec![VectorField::zeros(&grid); n_t],
        }
    }

    /// Builds the momenta from the nodes alone: minimal-norm solution of the
    /// discrete continuity equation plus the best divergence-free constant.
    pub fn from_densities(densities: Vec<GridDensity>) -> Result<Self> {
        let grid = densities
            .first()
            .ok_or_else(|| Error::Domain("empty curve".into()))?
            .grid();
        let n_t = densities.len() - 1;
        let mut curve = Self::new(grid, densities, vec![VectorField::zeros(&grid); n_t])?;
        curve.project_momenta(&Spectral::new(grid));
        curve.optimize_constant_momentum();
        Ok(curve)
    }

    pub fn n_steps(&self) -> usize {
        self.densities.len() - 1
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.n_steps() as f64
    }

    /// Node times `t_n`.
    pub fn times(&self) -> Vec<f64> {
        let n = self.n_steps();
        (0..=n).map(|i| i as f64 / n as f64).collect()
    }

    /// Time-averaged density values at half-step `n`.
    pub fn midpoint_values(&self, n: usize) -> Vec<f64> {
        let a = self.densities[n].values();
        let b = self.densities[n + 1].values();
        a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect()
    }

    /// `(u_{n+1} - u_n)/Δt + Div m_{n+1/2}` in density units.
    pub fn continuity_defect(&self, n: usize) -> Vec<f64> {
        let inv_dt = self.n_steps() as f64;
        let a = self.densities[n].values();
        let b = self.densities[n + 1].values();
        let div = centered_divergence(&self.grid, &self.momenta[n].components);
        a.iter()
            .zip(&b)
            .zip(&div)
            .map(|((x, y), dv)| (y - x) * inv_dt + dv)
            .collect()
    }

    /// Adds the minimal-norm correction that cancels the continuity defect at
    /// every half-step.
    pub fn project_momenta(&mut self, sp: &Spectral) {
        for n in 0..self.n_steps() {
            let defect = self.continuity_defect(n);
            let neg: Vec<f64> = defect.iter().map(|v| -v).collect();
            let fix = VectorField {
                components: sp.solve_divergence(&neg),
            };
            self.momenta[n].add_assign(&fix);
        }
    }

    /// Adds to each half-step momentum the constant vector that minimizes the
    /// kinetic action (constants are divergence free). Skipped at half-steps
    /// with empty cells.
    pub fn optimize_constant_momentum(&mut self) {
        for n in 0..self.n_steps() {
            let rb = self.midpoint_values(n);
            if rb.iter().any(|&r| r <= DENSITY_FLOOR) {
                continue;
            }
            let inv_sum: f64 = rb.iter().map(|r| 1.0 / r).sum();
            for comp in self.momenta[n].components.iter_mut() {
                let c = -comp.iter().zip(&rb).map(|(m, r)| m / r).sum::<f64>() / inv_sum;
                comp.iter_mut().for_each(|v| *v += c);
            }
        }
    }

    /// Reverses time: nodes in reverse order, momenta reversed and negated.
    pub fn reversed(&self) -> Self {
        let mut momenta: Vec<VectorField> = self.momenta.iter().rev().cloned().collect();
        momenta.iter_mut().for_each(|m| m.scale(-1.0));
        Self {
            grid: self.grid,
            densities: self.densities.iter().rev().cloned().collect(),
            momenta,
        }
    }
}

/// `H(ρ | Leb) = Σ p_i log(p_i m^d)`.
pub fn entropy(rho: &GridDensity) -> f64 {
    let n = rho.grid().len() as f64;
    rho.mass()
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * (p * n).ln())
        .sum()
}

/// `F(ρ) = (1/2) Σ |D√u|² h^d` with `D` the centered periodic difference.
pub fn fisher_info(rho: &GridDensity) -> f64 {
    let grid = rho.grid();
    let root: Vec<f64> = rho.values().iter().map(|u| u.sqrt()).collect();
    let mut total = 0.0;
    for a in 0..grid.dim() {
        total += centered_difference(&grid, &root, a)
            .iter()
            .map(|v| v * v)
            .sum::<f64>();
    }
    0.5 * total * grid.cell_volume()
}

/// Result of a kinetic-action evaluation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ActionReport {
    /// `+∞` when momentum sits on an empty cell.
    pub action: f64,
    /// `(half-step, cell)` pairs carrying momentum over empty density (first 16).
    pub offenders: Vec<(usize, usize)>,
    pub offender_count: usize,
}

/// `A = (1/2) Σ_n Δt Σ_i |m_{n+1/2,i}|² / ū_{n+1/2,i} h^d`.
pub fn kinetic_action(curve: &DensityCurve) -> f64 {
    kinetic_action_report(curve).action
}

pub fn kinetic_action_report(curve: &DensityCurve) -> ActionReport {
    let hd = curve.grid.cell_volume();
    let dt = curve.dt();
    let mut total = 0.0;
    let mut offenders = Vec::new();
    let mut count = 0;
    for n in 0..curve.n_steps() {
        let rb = curve.midpoint_values(n);
        let m2 = curve.momenta[n].norm_sq();
        let mut slice = 0.0;
        for (i, (&r, &q)) in rb.iter().zip(&m2).enumerate() {
            if r <= DENSITY_FLOOR {
                if q > 0.0 {
                    count += 1;
                    if offenders.len() < 16 {
                        offenders.push((n, i));
                    }
                }
                continue;
            }
            slice += q / r;
        }
        total += 0.5 * dt * slice * hd;
    }
    ActionReport {
        action: if count > 0 { f64::INFINITY } else { total },
        offenders,
        offender_count: count,
    }
}

/// Trapezoid rule over nodes of a uniformly spaced profile on `[0, 1]`.
pub fn trapezoid(values: &[f64]) -> f64 {
    let n = values.len() - 1;
    let inner: f64 = values.iter().sum();
    (inner - 0.5 * (values[0] + values[n])) / n as f64
}

/// `max_n ‖(u_{n+1} - u_n)/Δt + Div m_{n+1/2}‖₁`.
pub fn continuity_residual(curve: &DensityCurve) -> f64 {
    let hd = curve.grid.cell_volume();
    (0..curve.n_steps())
        .map(|n| curve.continuity_defect(n).iter().map(|v| v.abs()).sum::<f64>() * hd)
        .fold(0.0, f64::max)
}

/// Quadratic transport cost on the circle, `D²_MK = inf (1/2) ∫ dist² dγ`,
/// between two grid densities (atoms at cell centers).
pub fn wasserstein2_circle(rho0: &GridDensity, rho1: &GridDensity) -> Result<f64> {
    let grid = rho0.grid();
    if grid.dim() != 1 {
        return Err(Error::UnsupportedDimension(grid.dim()));
    }
    if rho1.grid() != grid {
        return Err(Error::GridMismatch("densities on different grids".into()));
    }
    let x: Vec<f64> = (0..grid.len()).map(|i| grid.center(i)[0]).collect();
    Ok(circle_w2_atoms(&x, rho0.mass(), &x, rho1.mass())?.cost)
}

/// Optimal rotation found by [`circle_w2_atoms`].
#[derive(Clone, Debug)]
pub struct CirclePlan {
    pub cost: f64,
    /// Shift `θ` of the quantile parameter that attains the minimum.
    pub theta: f64,
}

struct LiftedQuantile {
    pos: Vec<f64>,
    cdf: Vec<f64>,
}

impl LiftedQuantile {
    fn new(x: &[f64], w: &[f64]) -> Result<Self> {
        if x.len() != w.len() || x.is_empty() {
            return Err(Error::GridMismatch("atom positions and weights differ".into()));
        }
        let mut atoms: Vec<(f64, f64)> = x.iter().map(|&p| wrap_scalar(p)).zip(w.iter().copied()).collect();
        if atoms.iter().any(|&(_, m)| !(m >= 0.0)) {
            return Err(Error::InvalidDensity("negative atom weight".into()));
        }
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidDensity(format!("atom weights sum to {total}")));
        }
        let mut acc = 0.0;
        let mut cdf = Vec::with_capacity(atoms.len());
        for a in &atoms {
            acc += a.1 / total;
            cdf.push(acc);
        }
        *cdf.last_mut().unwrap() = 1.0;
        Ok(Self {
            pos: atoms.into_iter().map(|a| a.0).collect(),
            cdf,
        })
    }

    /// Left-continuous quantile on `(0, 1]`, lifted by `Q(u + 1) = Q(u) + 1`.
    fn eval(&self, u: f64) -> f64 {
        let mut k = u.floor();
        let mut w = u - k;
        if w <= 0.0 {
            w = 1.0;
            k -= 1.0;
        }
        let i = self.cdf.partition_point(|&c| c < w).min(self.pos.len() - 1);
        self.pos[i] + k
    }
}

/// `G(θ) = (1/2) ∫_0^1 |Q0(u) - Q1(u - θ)|² du`; exact for atomic measures.
fn rotation_cost(q0: &LiftedQuantile, q1: &LiftedQuantile, theta: f64) -> f64 {
    let mut bps: Vec<f64> = Vec::with_capacity(q0.cdf.len() + q1.cdf.len() + 2);
    bps.push(0.0);
    bps.push(1.0);
    bps.extend(q0.cdf.iter().copied().filter(|&c| c > 0.0 && c < 1.0));
    for &c in &q1.cdf {
        let u = c + theta;
        let u = u - u.floor();
        if u > 0.0 && u < 1.0 {
            bps.push(u);
        }
    }
    bps.sort_by(f64::total_cmp);
    let mut total = 0.0;
    for win in bps.windows(2) {
        let len = win[1] - win[0];
        if len <= 0.0 {
            continue;
        }
        let u = 0.5 * (win[0] + win[1]);
        let diff = q0.eval(u) - q1.eval(u - theta);
        total += len * diff * diff;
    }
    0.5 * total
}

/// Exact quadratic transport cost between two atomic measures on the circle.
///
/// The optimal plan is a monotone rearrangement up to a rotation `θ` of the
/// quantile parameter; the cost is convex and piecewise linear in `θ` with
/// kinks at differences of cumulative weights, so the minimum is located by
/// bisection over the sorted kink set. Ties go to the smallest `θ`.
pub fn circle_w2_atoms(x0: &[f64], w0: &[f64], x1: &[f64], w1: &[f64]) -> Result<CirclePlan> {
    let q0 = LiftedQuantile::new(x0, w0)?;
    let q1 = LiftedQuantile::new(x1, w1)?;
    let mut cands: Vec<f64> = Vec::with_capacity(3 * (q0.cdf.len() + 1) * (q1.cdf.len() + 1));
    let c0: Vec<f64> = std::iter::once(0.0).chain(q0.cdf.iter().copied()).collect();
    let c1: Vec<f64> = std::iter::once(0.0).chain(q1.cdf.iter().copied()).collect();
    for &a in &c0 {
        for &b in &c1 {
            for k in [-1.0, 0.0, 1.0] {
                let t = a - b + k;
                if (-1.0..=1.0).contains(&t) {
                    cands.push(t);
                }
            }
        }
    }
    cands.sort_by(f64::total_cmp);
    // near-duplicate kinks would create spurious plateaus for the bisection
    cands.dedup_by(|b, a| *b - *a < 1e-12);
    let g = |i: usize| rotation_cost(&q0, &q1, cands[i]);
    // first index whose right neighbour is not strictly lower
    let (mut lo, mut hi) = (0usize, cands.len() - 1);
    while lo < hi {
        let mid = (lo + hi) / 2;
        let (a, b) = (g(mid), g(mid + 1));
        if b < a - 1e-15 * a.abs().max(1e-300) {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    // walk left across a flat bottom so that ties go to the smallest θ
    let mut best = lo;
    let best_val = g(lo);
    while best > 0 && g(best - 1) <= best_val + 1e-15 * best_val.abs() {
        best -= 1;
    }
    Ok(CirclePlan {
        cost: g(best),
        theta: cands[best],
    })
}

/// Optimal circle plan as `(mass, source, lifted target)` triples: each piece
/// of mass moves from `source ∈ [0, 1)` to `target`, with `target - source` the
/// signed displacement.
pub fn circle_transport_pairs(x0: &[f64], w0: &[f64], x1: &[f64], w1: &[f64]) -> Result<(f64, Vec<(f64, f64, f64)>)> {
    let plan = circle_w2_atoms(x0, w0, x1, w1)?;
    let q0 = LiftedQuantile::new(x0, w0)?;
    let q1 = LiftedQuantile::new(x1, w1)?;
    let theta = plan.theta;
    let mut bps: Vec<f64> = vec![0.0, 1.0];
    bps.extend(q0.cdf.iter().copied().filter(|&c| c > 0.0 && c < 1.0));
    for &c in &q1.cdf {
        let u = c + theta;
        let u = u - u.floor();
        if u > 0.0 && u < 1.0 {
            bps.push(u);
        }
    }
    bps.sort_by(f64::total_cmp);
    let mut pairs = Vec::new();
    for win in bps.windows(2) {
        let len = win[1] - win[0];
        if len <= 0.0 {
            continue;
        }
        let u = 0.5 * (win[0] + win[1]);
        pairs.push((len, q0.eval(u), q1.eval(u - theta)));
    }
    Ok((plan.cost, pairs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heat::heat_convolve;
    use crate::lp::{solve_standard_form, LpStatus};
    use proptest::prelude::*;

    fn line(m: usize) -> TorusGrid {
        TorusGrid::line(m).unwrap()
    }

    fn translating_uniform(grid: &TorusGrid, n_t: usize, v: f64) -> DensityCurve {
        let rho = GridDensity::uniform(grid);
        DensityCurve::new(
            *grid,
            vec![rho; n_t + 1],
            vec![VectorField::constant(grid, &[v, v]); n_t],
        )
        .unwrap()
    }

    #[test]
    fn density_validation() {
        let g = line(4);
        assert!(GridDensity::new(g, vec![0.25; 4]).is_ok());
        assert!(GridDensity::new(g, vec![0.5, 0.5, 0.1, -0.1]).is_err());
        assert!(GridDensity::new(g, vec![0.3; 4]).is_err());
        assert!(GridDensity::new(g, vec![0.5; 2]).is_err());
    }

    #[test]
    fn entropy_examples() {
        let g = line(16);
        assert_eq!(entropy(&GridDensity::uniform(&g)), 0.0);
        assert!((entropy(&GridDensity::dirac(&g, 3)) - 16f64.ln()).abs() < 1e-14);
    }

    /// Composite Simpson quadrature on a fine grid of the periodic integrand.
    fn periodic_quadrature(f: impl Fn(f64) -> f64, n: usize) -> f64 {
        let h = 1.0 / n as f64;
        // trapezoid is spectrally accurate for smooth periodic integrands
        (0..n).map(|i| f(i as f64 * h)).sum::<f64>() * h
    }

    #[test]
    fn entropy_of_wrapped_gaussian_matches_quadrature() {
        let g = line(256);
        let sigma: f64 = 0.1;
        let rho = GridDensity::wrapped_gaussian(&g, &[0.5], sigma).unwrap();
        let s = sigma * sigma;
        let exact = periodic_quadrature(|x| {
            let r = theta_1d(s, x - 0.5);
            r * r.ln()
        }, 20000);
        assert!((entropy(&rho) - exact).abs() < 1e-4);
    }

    #[test]
    fn fisher_of_wrapped_gaussian_matches_quadrature() {
        let g = line(256);
        let sigma: f64 = 0.15;
        let rho = GridDensity::wrapped_gaussian(&g, &[0.5], sigma).unwrap();
        let s = sigma * sigma;
        let exact = periodic_quadrature(|x| {
            let dx = 1e-5;
            let r = theta_1d(s, x - 0.5);
            let dl = ((theta_1d(s, x + dx - 0.5)).ln() - (theta_1d(s, x - dx - 0.5)).ln()) / (2.0 * dx);
            0.125 * dl * dl * r
        }, 20000);
        let f = fisher_info(&rho);
        assert!(((f - exact) / exact).abs() < 1e-3, "{f} vs {exact}");
        assert_eq!(fisher_info(&GridDensity::uniform(&g)), 0.0);
    }

    #[test]
    fn action_examples() {
        let g = line(32);
        let rho = GridDensity::wrapped_gaussian(&g, &[0.4], 0.1).unwrap();
        assert_eq!(kinetic_action(&DensityCurve::constant(&rho, 8)), 0.0);
        let c = translating_uniform(&g, 8, 0.5);
        assert!((kinetic_action(&c) - 0.125).abs() < 1e-14);
        let g2 = TorusGrid::new(2, 8).unwrap();
        let c2 = translating_uniform(&g2, 4, 0.5);
        assert!((kinetic_action(&c2) - 0.25).abs() < 1e-14);
    }

    #[test]
    fn momentum_on_empty_cell_is_infinite() {
        let g = line(8);
        let rho = GridDensity::dirac(&g, 0);
        let mut c = DensityCurve::constant(&rho, 2);
        c.momenta[1].components[0][5] = 0.1;
        let rep = kinetic_action_report(&c);
        assert!(rep.action.is_infinite());
        assert_eq!(rep.offenders, vec![(1, 5)]);
    }

    fn gaussian_translation(m: usize, n_t: usize, v: f64) -> DensityCurve {
        let g = line(m);
        let sigma: f64 = 0.1;
        let dens: Vec<GridDensity> = (0..=n_t)
            .map(|n| GridDensity::wrapped_gaussian(&g, &[0.3 + v * n as f64 / n_t as f64], sigma).unwrap())
            .collect();
        // exact continuum momentum at the half-step times
        let moms = (0..n_t)
            .map(|n| {
                let t = (n as f64 + 0.5) / n_t as f64;
                let c = GridDensity::wrapped_gaussian(&g, &[0.3 + v * t], sigma).unwrap();
                VectorField {
                    components: vec![c.values().iter().map(|u| u * v).collect()],
                }
            })
            .collect();
        DensityCurve::new(g, dens, moms).unwrap()
    }

    #[test]
    fn continuity_residual_is_second_order() {
        let coarse = continuity_residual(&gaussian_translation(32, 64, 0.25));
        let fine = continuity_residual(&gaussian_translation(64, 64, 0.25));
        assert!(coarse > 0.0);
        let ratio = coarse / fine;
        assert!((3.0..5.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn continuity_detects_mismatch() {
        let g = line(32);
        let rho = GridDensity::wrapped_gaussian(&g, &[0.3], 0.1).unwrap();
        let mut c = DensityCurve::constant(&rho, 4);
        assert_eq!(continuity_residual(&c), 0.0);
        for (i, v) in c.momenta[2].components[0].iter_mut().enumerate() {
            *v = ((i * 37 % 11) as f64 - 5.0) * 0.3;
        }
        assert!(continuity_residual(&c) > 0.01);
    }

    #[test]
    fn from_densities_is_admissible_and_cheap() {
        let c = gaussian_translation(64, 16, 0.2);
        let rebuilt = DensityCurve::from_densities(c.densities.clone()).unwrap();
        assert!(continuity_residual(&rebuilt) < 1e-10);
        // rigid translation at speed 0.2 costs 0.02
        assert!((kinetic_action(&rebuilt) - 0.02).abs() < 2e-4);
    }

    #[test]
    fn action_is_translation_invariant() {
        let c = gaussian_translation(32, 8, 0.2);
        let roll = |v: &Vec<f64>| {
            let mut out = vec![0.0; v.len()];
            for (i, x) in v.iter().enumerate() {
                out[(i + 5) % v.len()] = *x;
            }
            out
        };
        let shifted = DensityCurve::new(
            c.grid,
            c.densities.iter().map(|d| d.shift([5, 0])).collect(),
            c.momenta
                .iter()
                .map(|mf| VectorField {
                    components: mf.components.iter().map(roll).collect(),
                })
                .collect(),
        )
        .unwrap();
        let (a, b) = (kinetic_action(&shifted), kinetic_action(&c));
        assert!((a - b).abs() <= 1e-14 * b, "{a} vs {b}");
    }

    #[test]
    fn reversal_negates_momentum() {
        let c = gaussian_translation(16, 4, 0.2);
        let r = c.reversed();
        assert!(continuity_residual(&r) - continuity_residual(&c) < 1e-14);
        assert_eq!(kinetic_action(&r), kinetic_action(&c));
    }

    #[test]
    fn w2_examples() {
        let g = line(10);
        let rho = GridDensity::wrapped_gaussian(&g, &[0.3], 0.1).unwrap();
        assert!(wasserstein2_circle(&rho, &rho).unwrap().abs() < 1e-15);
        let plan = circle_w2_atoms(&[0.2], &[1.0], &[0.5], &[1.0]).unwrap();
        assert!((plan.cost - 0.045).abs() < 1e-15);
        let wrapped = circle_w2_atoms(&[0.1], &[1.0], &[0.9], &[1.0]).unwrap();
        assert!((wrapped.cost - 0.02).abs() < 1e-15);
        let a = GridDensity::dirac(&g, 2);
        let b = GridDensity::dirac(&g, 5);
        assert!((wasserstein2_circle(&a, &b).unwrap() - 0.045).abs() < 1e-15);
        let g2 = TorusGrid::new(2, 4).unwrap();
        let u = GridDensity::uniform(&g2);
        assert!(matches!(wasserstein2_circle(&u, &u), Err(Error::UnsupportedDimension(2))));
    }

    /// Transport LP over all couplings of two grid densities.
    fn w2_lp(rho0: &GridDensity, rho1: &GridDensity) -> f64 {
        let g = rho0.grid();
        let m = g.len();
        let mut a = vec![0.0; 2 * m * m * m];
        let mut b = vec![0.0; 2 * m];
        let mut c = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..m {
                let v = i * m + j;
                a[i * m * m + v] = 1.0;
                a[(m + j) * m * m + v] = 1.0;
                let dist = crate::torus::axis_dist(g.center(i)[0], g.center(j)[0]);
                c[v] = 0.5 * dist * dist;
            }
            b[i] = rho0.mass()[i];
            b[m + i] = rho1.mass()[i];
        }
        let sol = solve_standard_form(&a, &b, &c, 2 * m, m * m).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        sol.objective
    }

    #[test]
    fn w2_matches_transport_lp() {
        let g = line(64);
        let r0 = GridDensity::wrapped_gaussian(&g, &[0.25], 0.08).unwrap();
        let r1 = GridDensity::wrapped_gaussian(&g, &[0.75], 0.08).unwrap();
        let exact = w2_lp(&r0, &r1);
        let fast = wasserstein2_circle(&r0, &r1).unwrap();
        assert!((exact - fast).abs() < 1e-6, "{exact} vs {fast}");
        let r2 = GridDensity::from_fn(&g, |x| 1.0 + 0.8 * (2.0 * std::f64::consts::PI * x[0]).sin()).unwrap();
        let exact = w2_lp(&r0, &r2);
        let fast = wasserstein2_circle(&r0, &r2).unwrap();
        assert!((exact - fast).abs() < 1e-6, "{exact} vs {fast}");
    }

    #[test]
    fn transport_pairs_reproduce_cost_and_marginals() {
        let g = line(32);
        let x: Vec<f64> = (0..32).map(|i| g.center(i)[0]).collect();
        let r0 = GridDensity::wrapped_gaussian(&g, &[0.1], 0.08).unwrap();
        let r1 = GridDensity::wrapped_gaussian(&g, &[0.7], 0.05).unwrap();
        let (cost, pairs) = circle_transport_pairs(&x, r0.mass(), &x, r1.mass()).unwrap();
        let recomputed: f64 = pairs.iter().map(|(w, a, b)| 0.5 * w * (b - a).powi(2)).sum();
        assert!((cost - recomputed).abs() < 1e-14);
        let mut m0 = vec![0.0; 32];
        let mut m1 = vec![0.0; 32];
        for (w, a, b) in &pairs {
            m0[g.locate(&[*a])] += w;
            m1[g.locate(&[*b])] += w;
        }
        for i in 0..32 {
            assert!((m0[i] - r0.mass()[i]).abs() < 1e-14);
            assert!((m1[i] - r1.mass()[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn w2_of_heat_flow_is_order_s() {
        let g = line(128);
        let rho = GridDensity::wrapped_gaussian(&g, &[0.4], 0.05).unwrap();
        for &s in &[0.001, 0.005, 0.02] {
            let w = wasserstein2_circle(&rho, &heat_convolve(&rho, s).unwrap()).unwrap();
            assert!(w <= s, "s={s}: {w}");
        }
    }

    proptest! {
        #[test]
        fn entropy_nonnegative(vals in prop::collection::vec(0.0f64..1.0, 16)) {
            prop_assume!(vals.iter().sum::<f64>() > 1e-6);
            let rho = GridDensity::from_unnormalized(line(16), vals).unwrap();
            prop_assert!(entropy(&rho) >= -1e-15);
        }

        #[test]
        fn w2_symmetric(
            a in prop::collection::vec(0.0f64..1.0, 12),
            b in prop::collection::vec(0.0f64..1.0, 12),
        ) {
            prop_assume!(a.iter().sum::<f64>() > 1e-3 && b.iter().sum::<f64>() > 1e-3);
            let r0 = GridDensity::from_unnormalized(line(12), a).unwrap();
            let r1 = GridDensity::from_unnormalized(line(12), b).unwrap();
            let x = wasserstein2_circle(&r0, &r1).unwrap();
            let y = wasserstein2_circle(&r1, &r0).unwrap();
            prop_assert!((x - y).abs() < 1e-12);
            prop_assert!(x >= 0.0 && x <= 0.125 + 1e-12);
        }
    }
}
