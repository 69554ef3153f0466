//! Heat semigroup `τ_s` on `T^d` with generator `Δ/2`.
//!
//! Two routes: the lattice theta series (pointwise, used as an oracle and for
//! dense kernels) and the Fourier multiplier `exp(-2π²|k|²s)` (default for
//! grid densities).

use std::f64::consts::PI;

use crate::measures::GridDensity;
use crate::spectral::Spectral;
use crate::torus::{centered, TorusGrid};
use crate::{Error, Result};

/// Negative spectral values up to this fraction of the maximum are treated as
/// round-off and clamped.
pub const RINGING_CLAMP: f64 = 1e-9;

/// Minimum lattice radius per axis for the theta series.
pub fn truncation_radius(s: f64) -> usize {
    (6.0 * s.sqrt()).ceil() as usize + 2
}

/// `Σ_l exp(-(x̄ + l)² / 2s)` over a symmetric range of lattice shifts, with
/// `x̄` the representative of `x` in `[-1/2, 1/2)`. Terms are added outward
/// until they drop below `1e-17` of the running sum, and at least up to
/// [`truncation_radius`].
fn lattice_sum_1d(s: f64, x: f64, offset_sq: f64) -> f64 {
    let xb = centered(x);
    let l_min = truncation_radius(s) as i64;
    let term = |l: i64| (-((xb + l as f64).powi(2) - offset_sq) / (2.0 * s)).exp();
    let mut acc = term(0);
    let mut l = 1i64;
    loop {
        let t = term(l) + term(-l);
        acc += t;
        if l >= l_min && t <= 1e-17 * acc {
            break;
        }
        l += 1;
    }
    acc
}

/// One-dimensional theta kernel.
pub fn theta_1d(s: f64, x: f64) -> f64 {
    lattice_sum_1d(s, x, 0.0) / (2.0 * PI * s).sqrt()
}

/// `log τ_s(x)` in one dimension, accurate even when the value underflows.
pub fn log_theta_1d(s: f64, x: f64) -> f64 {
    let xb = centered(x);
    -(xb * xb) / (2.0 * s) + lattice_sum_1d(s, x, xb * xb).ln() - 0.5 * (2.0 * PI * s).ln()
}

/// `τ_s(x)` on `T^d` by the lattice theta series; `d` is the length of `x`.
pub fn theta_kernel(s: f64, x: &[f64]) -> Result<f64> {
    check_time(s)?;
    if x.is_empty() || x.len() > 2 {
        return Err(Error::UnsupportedDimension(x.len()));
    }
    Ok(x.iter().map(|&xi| theta_1d(s, xi)).product())
}

pub fn log_theta_kernel(s: f64, x: &[f64]) -> Result<f64> {
    check_time(s)?;
    Ok(x.iter().map(|&xi| log_theta_1d(s, xi)).sum())
}

fn check_time(s: f64) -> Result<()> {
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::Domain(format!("heat time must be positive, got {s}")));
    }
    Ok(())
}

/// Heat flow of a grid density by spectral multiplication.
///
/// Mass is preserved exactly. Negative values produced by round-off (at most
/// [`RINGING_CLAMP`] times the maximum in magnitude) are clamped to zero and
/// the result renormalized; anything more negative is reported as
/// [`Error::HeatRinging`].
pub fn heat_convolve(rho: &GridDensity, s: f64) -> Result<GridDensity> {
    heat_convolve_with(&Spectral::new(rho.grid()), rho, s)
}

pub fn heat_convolve_with(sp: &Spectral, rho: &GridDensity, s: f64) -> Result<GridDensity> {
    if s < 0.0 || !s.is_finite() {
        return Err(Error::Domain(format!("heat time must be nonnegative, got {s}")));
    }
    if s == 0.0 {
        return Ok(rho.clone());
    }
    let mass = clamp_ringing(sp.heat(rho.mass(), s))?;
    GridDensity::from_unnormalized(rho.grid(), mass)
}

/// Clamps round-off negatives of a spectrally smoothed nonnegative field.
pub fn clamp_ringing(mut v: Vec<f64>) -> Result<Vec<f64>> {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = v.iter().cloned().fold(f64::INFINITY, f64::min);
    if min < 0.0 {
        if -min > RINGING_CLAMP * max.abs() {
            return Err(Error::HeatRinging { min, max });
        }
        v.iter_mut().for_each(|x| *x = x.max(0.0));
    }
    Ok(v)
}

/// Empirical bracket `[r_min, r_max]` of
/// `τ_s(y - x) (2πs)^{d/2} exp(dist²(x, y) / 2s)` over all grid pairs.
pub fn gaussian_bound_ratio(grid: &TorusGrid, s: f64) -> Result<(f64, f64)> {
    if !(s > 0.0 && s <= 1.0) {
        return Err(Error::Domain(format!("bound ratio needs s in (0, 1], got {s}")));
    }
    let m = grid.cells_per_axis();
    let h = grid.spacing();
    // ratios factor over axes and depend only on the offset
    let per_axis: Vec<f64> = (0..m)
        .map(|j| {
            let xb = centered(j as f64 * h);
            lattice_sum_1d(s, xb, xb * xb)
        })
        .collect();
    let (lo, hi) = per_axis
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &r| (lo.min(r), hi.max(r)));
    let d = grid.dim() as i32;
    Ok((lo.powi(d), hi.powi(d)))
}

/// Dense one-dimensional log kernel `log(h τ_s(j h))` for offsets `j = 0..m`,
/// shifted so that the kernel weights sum to one.
pub fn log_kernel_row(m: usize, s: f64) -> Vec<f64> {
    let h = 1.0 / m as f64;
    let mut row: Vec<f64> = (0..m).map(|j| log_theta_1d(s, j as f64 * h) + h.ln()).collect();
    let z = log_sum_exp(&row);
    row.iter_mut().for_each(|v| *v -= z);
    row
}

pub fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Computes `log(τ_s * exp(ℓ))` for a log-density field `ℓ`.
///
/// The spectral route is used when its result stays well above round-off;
/// otherwise the convolution is redone exactly in the log domain with the
/// separable theta kernel.
#[derive(Clone, Debug)]
pub struct LogHeat {
    sp: Spectral,
}

impl LogHeat {
    pub fn new(grid: TorusGrid) -> Self {
        Self {
            sp: Spectral::new(grid),
        }
    }

    pub fn spectral(&self) -> &Spectral {
        &self.sp
    }

    pub fn apply(&self, log_field: &[f64], s: f64) -> Vec<f64> {
        if s == 0.0 {
            return log_field.to_vec();
        }
        let max = log_field.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let shifted: Vec<f64> = log_field.iter().map(|v| (v - max).exp()).collect();
        let out = self.sp.heat(&shifted, s);
        let top = out.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if out.iter().all(|&v| v > 1e-11 * top) {
            return out.into_iter().map(|v| v.ln() + max).collect();
        }
        self.apply_dense(log_field, s)
    }

    /// Exact log-domain convolution, separable over axes.
    pub fn apply_dense(&self, log_field: &[f64], s: f64) -> Vec<f64> {
        let grid = self.sp.grid();
        let m = grid.cells_per_axis();
        let kernel = log_kernel_row(m, s);
        let mut cur = log_field.to_vec();
        let mut buf = vec![0.0; m];
        for axis in 0..grid.dim() {
            let mut next = vec![0.0; cur.len()];
            for i in 0..cur.len() {
                let idx = grid.multi_index(i);
                for (j, b) in buf.iter_mut().enumerate() {
                    let mut jdx = idx;
                    jdx[axis] = j;
                    let off = (idx[axis] + m - j) % m;
                    *b = kernel[off] + cur[grid.flat_index(jdx)];
                }
                next[i] = log_sum_exp(&buf);
            }
            cur = next;
        }
        cur
    }
}
