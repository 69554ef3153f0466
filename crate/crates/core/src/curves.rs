//! Test and reference curves: random smooth curves, rigid translations, heat
//! flows and the displacement (McCann) interpolation on the circle.

use std::f64::consts::PI;

use rand::Rng;

use crate::heat::{clamp_ringing, heat_convolve_with};
use crate::measures::{circle_w2_atoms, DensityCurve, GridDensity, VectorField};
use crate::spectral::Spectral;
use crate::torus::TorusGrid;
use crate::{Error, Result};

/// Random curve of strictly positive, band-limited densities drifting at a
/// random constant speed, with momenta from [`DensityCurve::from_densities`].
///
/// The density is `1 + a₁ cos 2π(k·x - vt - φ₁) + a₂(t) cos 4π(k'·x - vt - φ₂)`
/// with `|a₁| ≤ 0.35` and `|a₂(t)| ≤ 0.12`, so it stays above `0.5`.
pub fn random_smooth_curve<R: Rng>(grid: &TorusGrid, n_t: usize, rng: &mut R) -> Result<DensityCurve> {
    let a1 = rng.random_range(-0.35..0.35);
    let b_start = rng.random_range(-0.12..0.12);
    let b_end = rng.random_range(-0.12..0.12);
    let v = rng.random_range(-0.5..0.5);
    let p1 = rng.random_range(0.0..1.0);
    let p2 = rng.random_range(0.0..1.0);
    let dir1 = [1.0, rng.random_range(0..2) as f64];
    let dir2 = [rng.random_range(0..2) as f64, 1.0];
    let d = grid.dim();
    let proj = |x: [f64; 2], dir: [f64; 2]| (0..d).map(|a| x[a] * dir[a]).sum::<f64>();
    let densities = (0..=n_t)
        .map(|n| {
            let t = n as f64 / n_t as f64;
            let a2 = b_start * (1.0 - t) + b_end * t;
            GridDensity::from_fn(grid, |x| {
                1.0 + a1 * (2.0 * PI * (proj(x, dir1) - v * t - p1)).cos()
                    + a2 * (4.0 * PI * (proj(x, dir2) - v * t - p2)).cos()
            })
        })
        .collect::<Result<Vec<_>>>()?;
    DensityCurve::from_densities(densities)
}

/// Rigid translation of `rho` at constant velocity, by spectral shift.
/// Momenta are `ρ v` at the half-steps, then projected onto the discrete
/// continuity equation.
pub fn translation_curve(rho: &GridDensity, velocity: &[f64], n_t: usize) -> Result<DensityCurve> {
    let grid = rho.grid();
    if velocity.len() != grid.dim() {
        return Err(Error::GridMismatch("velocity has the wrong dimension".into()));
    }
    let sp = Spectral::new(grid);
    let at = |t: f64| -> Result<GridDensity> {
        let shifted = shift_field(&sp, rho.mass(), velocity, t);
        GridDensity::from_unnormalized(grid, clamp_ringing(shifted)?)
    };
    let densities = (0..=n_t)
        .map(|n| at(n as f64 / n_t as f64))
        .collect::<Result<Vec<_>>>()?;
    let momenta = (0..n_t)
        .map(|n| {
            let mid = at((n as f64 + 0.5) / n_t as f64)?.values();
            Ok(VectorField {
                components: velocity
                    .iter()
                    .map(|v| mid.iter().map(|u| u * v).collect())
                    .collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut curve = DensityCurve::new(grid, densities, momenta)?;
    curve.project_momenta(&sp);
    Ok(curve)
}

/// Band-limited translation of a grid field by `velocity · t`.
fn shift_field(sp: &Spectral, field: &[f64], velocity: &[f64], t: f64) -> Vec<f64> {
    let mut c = sp.forward(field);
    let m = sp.grid().cells_per_axis() as i64;
    for (flat, v) in c.iter_mut().enumerate() {
        let k = sp.wavevector(flat);
        let mut phase = 0.0;
        for (a, vel) in velocity.iter().enumerate() {
            // the Nyquist mode has no well-defined direction; keep it real
            if m % 2 == 0 && k[a].abs() == m / 2 {
                continue;
            }
            phase -= 2.0 * PI * k[a] as f64 * vel * t;
        }
        *v *= rustfft::num_complex::Complex64::from_polar(1.0, phase);
    }
    sp.inverse(c)
}

/// Heat-flow curve `ρ_t = ρ * τ_{ct}` with reconstructed momenta.
pub fn heat_flow_curve(rho: &GridDensity, c: f64, n_t: usize) -> Result<DensityCurve> {
    let sp = Spectral::new(rho.grid());
    let densities = (0..=n_t)
        .map(|n| heat_convolve_with(&sp, rho, c * n as f64 / n_t as f64))
        .collect::<Result<Vec<_>>>()?;
    DensityCurve::from_densities(densities)
}

/// Displacement interpolation between two densities on the circle.
///
/// Each endpoint CDF is reconstructed as a monotone C¹ cubic through its
/// cell-edge values, so the inputs are recovered exactly as cell masses and
/// intermediate densities are continuous. The interpolated quantile is
/// `Q_t(u) = (1 - t) Q₀(u) + t Q₁(u - θ)` with `θ` from the discrete optimal
/// plan; cell masses are differences of `Q_t⁻¹` at the cell edges and the
/// momentum is density times the displacement `Q₁(u - θ) - Q₀(u)`, projected
/// onto the discrete continuity equation.
pub fn mccann_interpolant(rho0: &GridDensity, rho1: &GridDensity, n_t: usize) -> Result<DensityCurve> {
    let grid = rho0.grid();
    if grid.dim() != 1 {
        return Err(Error::UnsupportedDimension(grid.dim()));
    }
    if rho1.grid() != grid {
        return Err(Error::GridMismatch("endpoints live on different grids".into()));
    }
    if n_t == 0 {
        return Err(Error::Domain("need at least one time step".into()));
    }
    let m = grid.cells_per_axis();
    let mf = m as f64;
    let x: Vec<f64> = (0..m).map(|i| grid.center(i)[0]).collect();
    let theta = circle_w2_atoms(&x, rho0.mass(), &x, rho1.mass())?.theta;
    let q0 = SmoothCdf::new(rho0.mass());
    let q1 = SmoothCdf::new(rho1.mass());
    let qt = |t: f64, u: f64| (1.0 - t) * q0.quantile(u) + t * q1.quantile(u - theta);
    // Q_t(u) - u is 1-periodic and within [-3, 3]
    let inverse = |t: f64, y: f64| {
        let (mut lo, mut hi) = (y - 3.0, y + 3.0);
        for _ in 0..64 {
            let mid = 0.5 * (lo + hi);
            if qt(t, mid) < y {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    let masses = |t: f64| -> Vec<f64> {
        let edges: Vec<f64> = (0..=m).map(|j| inverse(t, j as f64 / mf)).collect();
        edges.windows(2).map(|w| (w[1] - w[0]).max(0.0)).collect()
    };
    // the centered divergence cannot move the checkerboard mode, so interior
    // nodes carry the linear interpolation of the endpoint amplitudes
    let checkerboard = |mass: &[f64]| {
        mass.iter()
            .enumerate()
            .map(|(i, w)| if i % 2 == 0 { *w } else { -*w })
            .sum::<f64>()
            / mf
    };
    let (c0, c1) = (checkerboard(rho0.mass()), checkerboard(rho1.mass()));
    let mut densities = Vec::with_capacity(n_t + 1);
    densities.push(rho0.clone());
    for n in 1..n_t {
        let t = n as f64 / n_t as f64;
        let mut mass = masses(t);
        if m % 2 == 0 {
            let wanted = (1.0 - t) * c0 + t * c1 - checkerboard(&mass);
            // never push a cell below zero; near-empty cells absorb less
            let room = mass
                .iter()
                .enumerate()
                .filter(|(i, _)| (i % 2 == 0) != (wanted > 0.0))
                .map(|(_, w)| *w)
                .fold(f64::INFINITY, f64::min);
            let shift = wanted.signum() * wanted.abs().min(room);
            for (i, w) in mass.iter_mut().enumerate() {
                *w += if i % 2 == 0 { shift } else { -shift };
            }
        }
        densities.push(GridDensity::from_unnormalized(grid, mass)?);
    }
    densities.push(rho1.clone());
    let momenta = (0..n_t)
        .map(|n| {
            let t = (n as f64 + 0.5) / n_t as f64;
            let mass = masses(t);
            let flux = x
                .iter()
                .zip(&mass)
                .map(|(&xc, &w)| {
                    let u = inverse(t, xc);
                    w * mf * (q1.quantile(u - theta) - q0.quantile(u))
                })
                .collect();
            VectorField {
                components: vec![flux],
            }
        })
        .collect();
    let mut curve = DensityCurve::new(grid, densities, momenta)?;
    curve.project_momenta(&Spectral::new(grid));
    Ok(curve)
}

/// Monotone cubic Hermite CDF through the cell-edge values of a mass vector
/// on `[0, 1)`, with its inverse extended to `R` by `Q(u + 1) = Q(u) + 1`.
struct SmoothCdf {
    cdf: Vec<f64>,
    slope: Vec<f64>,
}

impl SmoothCdf {
    fn new(mass: &[f64]) -> Self {
        let m = mass.len();
        let total: f64 = mass.iter().sum();
        let dens: Vec<f64> = mass.iter().map(|w| w / total * m as f64).collect();
        let mut cdf = Vec::with_capacity(m + 1);
        let mut acc = 0.0;
        cdf.push(0.0);
        for w in mass {
            acc += w / total;
            cdf.push(acc);
        }
        cdf[m] = 1.0;
        // harmonic mean of neighboring secants keeps the cubic monotone
        let slope = (0..=m)
            .map(|j| {
                let (a, b) = (dens[(j + m - 1) % m], dens[j % m]);
                if a > 0.0 && b > 0.0 {
                    2.0 * a * b / (a + b)
                } else {
                    0.0
                }
            })
            .collect();
        Self { cdf, slope }
    }

    fn eval_cell(&self, j: usize, s: f64) -> f64 {
        let h = 1.0 / (self.cdf.len() - 1) as f64;
        let (s2, s3) = (s * s, s * s * s);
        (2.0 * s3 - 3.0 * s2 + 1.0) * self.cdf[j]
            + (s3 - 2.0 * s2 + s) * h * self.slope[j]
            + (-2.0 * s3 + 3.0 * s2) * self.cdf[j + 1]
            + (s3 - s2) * h * self.slope[j + 1]
    }

    fn quantile(&self, u: f64) -> f64 {
        let lift = u.floor();
        let u = u - lift;
        let m = self.cdf.len() - 1;
        let mut j = self.cdf.partition_point(|&c| c <= u).saturating_sub(1).min(m - 1);
        while self.cdf[j + 1] <= self.cdf[j] && j > 0 {
            j -= 1;
        }
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..52 {
            let mid = 0.5 * (lo + hi);
            if self.eval_cell(j, mid) < u {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lift + (j as f64 + 0.5 * (lo + hi)) / m as f64
    }
}
