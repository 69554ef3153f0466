//! Fourier-side operators on a [`TorusGrid`]: heat multiplier, derivatives and
//! the inverse of the centered periodic divergence.
//!
//! Wavenumbers per axis run over the symmetric band `(-m/2, m/2]`.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::torus::TorusGrid;

/// FFT plans for one grid. Cheap to clone; plans are shared read-only.
#[derive(Clone)]
pub struct Spectral {
    grid: TorusGrid,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Spectral {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Spectral").field("grid", &self.grid).finish()
    }
}

/// Signed wavenumber of FFT bin `j` on an axis with `m` cells.
#[inline]
pub fn wavenumber(j: usize, m: usize) -> i64 {
    if j <= m / 2 {
        j as i64
    } else {
        j as i64 - m as i64
    }
}

impl Spectral {
    pub fn new(grid: TorusGrid) -> Self {
        let mut planner = FftPlanner::new();
        let m = grid.cells_per_axis();
        Self {
            grid,
            fwd: planner.plan_fft_forward(m),
            inv: planner.plan_fft_inverse(m),
        }
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    fn transform(&self, data: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        let m = self.grid.cells_per_axis();
        // rows (last axis is contiguous)
        plan.process(data);
        if self.grid.dim() == 2 {
            let mut col = vec![Complex64::new(0.0, 0.0); m];
            for c in 0..m {
                for r in 0..m {
                    col[r] = data[r * m + c];
                }
                plan.process(&mut col);
                for r in 0..m {
                    data[r * m + c] = col[r];
                }
            }
        }
    }

    pub fn forward(&self, field: &[f64]) -> Vec<Complex64> {
        let mut data: Vec<Complex64> = field.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut data, &self.fwd);
        data
    }

    /// Inverse transform, normalized, keeping the real part.
    pub fn inverse(&self, mut coeffs: Vec<Complex64>) -> Vec<f64> {
        self.transform(&mut coeffs, &self.inv);
        let scale = 1.0 / self.grid.len() as f64;
        coeffs.into_iter().map(|c| c.re * scale).collect()
    }

    /// Signed wavenumbers `(k0, k1)` of a flat spectral index.
    pub fn wavevector(&self, flat: usize) -> [i64; 2] {
        let m = self.grid.cells_per_axis();
        let idx = self.grid.multi_index(flat);
        let mut k = [0i64; 2];
        for a in 0..self.grid.dim() {
            k[a] = wavenumber(idx[a], m);
        }
        k
    }

    /// Applies a real multiplier given as a function of the wavevector.
    pub fn apply_multiplier<F>(&self, field: &[f64], symbol: F) -> Vec<f64>
    where
        F: Fn([i64; 2]) -> f64,
    {
        let mut c = self.forward(field);
        for (flat, v) in c.iter_mut().enumerate() {
            *v *= symbol(self.wavevector(flat));
        }
        self.inverse(c)
    }

    /// Heat semigroup `τ_s` with generator `Δ/2`: mode `k` damped by
    /// `exp(-2π²|k|²s)`.
    pub fn heat(&self, field: &[f64], s: f64) -> Vec<f64> {
        if s == 0.0 {
            return field.to_vec();
        }
        let mut out = self.apply_multiplier(field, |k| {
            let k2 = (k[0] * k[0] + k[1] * k[1]) as f64;
            (-2.0 * PI * PI * k2 * s).exp()
        });
        // the zero mode is untouched by the multiplier; restore the exact sum
        let before: f64 = field.iter().sum();
        let after: f64 = out.iter().sum();
        let shift = (before - after) / out.len() as f64;
        if shift != 0.0 {
            out.iter_mut().for_each(|v| *v += shift);
        }
        out
    }

    /// Spectral partial derivative along `axis` (Nyquist mode zeroed).
    pub fn derivative(&self, field: &[f64], axis: usize) -> Vec<f64> {
        let m = self.grid.cells_per_axis() as i64;
        let mut c = self.forward(field);
        for (flat, v) in c.iter_mut().enumerate() {
            let k = self.wavevector(flat)[axis];
            if m % 2 == 0 && k == m / 2 {
                *v = Complex64::new(0.0, 0.0);
            } else {
                *v *= Complex64::new(0.0, 2.0 * PI * k as f64);
            }
        }
        self.inverse(c)
    }

    pub fn gradient(&self, field: &[f64]) -> Vec<Vec<f64>> {
        (0..self.grid.dim())
            .map(|a| self.derivative(field, a))
            .collect()
    }

    /// Centered periodic difference `(u_{i+1} - u_{i-1}) / 2h` along `axis`.
    pub fn centered_difference(&self, field: &[f64], axis: usize) -> Vec<f64> {
        centered_difference(&self.grid, field, axis)
    }

    /// Minimal-norm `m` with `Div m = r` for the centered divergence.
    ///
    /// Modes annihilated by every axis symbol (zero and Nyquist modes) are
    /// dropped from `r`; the returned `m` has no component in them.
    pub fn solve_divergence(&self, r: &[f64]) -> Vec<Vec<f64>> {
        let d = self.grid.dim();
        let m = self.grid.cells_per_axis();
        let h = self.grid.spacing();
        let rhat = self.forward(r);
        let mut out: Vec<Vec<Complex64>> = vec![vec![Complex64::new(0.0, 0.0); rhat.len()]; d];
        for (flat, &rv) in rhat.iter().enumerate() {
            let k = self.wavevector(flat);
            let mut sig = [0.0f64; 2];
            let mut norm2 = 0.0;
            for a in 0..d {
                sig[a] = (2.0 * PI * k[a] as f64 / m as f64).sin() / h;
                if sig[a].abs() < 1e-9 {
                    sig[a] = 0.0;
                }
                norm2 += sig[a] * sig[a];
            }
            if norm2 == 0.0 {
                continue;
            }
            for a in 0..d {
                // symbol of Div along a is i·sig; minimal norm uses its conjugate
                out[a][flat] = Complex64::new(0.0, -sig[a]) * rv / norm2;
            }
        }
        out.into_iter().map(|c| self.inverse(c)).collect()
    }
}

/// Centered periodic difference `(u_{i+1} - u_{i-1}) / 2h` along `axis`.
pub fn centered_difference(grid: &TorusGrid, field: &[f64], axis: usize) -> Vec<f64> {
    let inv2h = 0.5 * grid.cells_per_axis() as f64;
    (0..field.len())
        .map(|i| (field[grid.neighbor(i, axis, 1)] - field[grid.neighbor(i, axis, -1)]) * inv2h)
        .collect()
}

/// Centered periodic divergence of a vector field given by components.
pub fn centered_divergence(grid: &TorusGrid, comps: &[Vec<f64>]) -> Vec<f64> {
    let mut div = vec![0.0; grid.len()];
    for (a, c) in comps.iter().enumerate() {
        for (o, v) in div.iter_mut().zip(centered_difference(grid, c, a)) {
            *o += v;
        }
    }
    div
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(grid: &TorusGrid, f: impl Fn([f64; 2]) -> f64) -> Vec<f64> {
        (0..grid.len()).map(|i| f(grid.center(i))).collect()
    }

    #[test]
    fn heat_damps_single_mode_exactly() {
        let g = TorusGrid::line(32).unwrap();
        let sp = Spectral::new(g);
        let u = sample(&g, |x| (2.0 * PI * 3.0 * x[0]).cos());
        let s = 0.01;
        let out = sp.heat(&u, s);
        let damp = (-2.0 * PI * PI * 9.0 * s).exp();
        for (o, v) in out.iter().zip(&u) {
            assert!((o - damp * v).abs() < 1e-13);
        }
    }

    #[test]
    fn derivative_of_sine_2d() {
        let g = TorusGrid::new(2, 16).unwrap();
        let sp = Spectral::new(g);
        let u = sample(&g, |x| (2.0 * PI * x[0]).sin() * (4.0 * PI * x[1]).cos());
        let du = sp.derivative(&u, 1);
        let expect = sample(&g, |x| -4.0 * PI * (2.0 * PI * x[0]).sin() * (4.0 * PI * x[1]).sin());
        for (a, b) in du.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-11);
        }
    }

    #[test]
    fn divergence_inverse_round_trip() {
        for (d, m) in [(1, 24), (2, 12)] {
            let g = TorusGrid::new(d, m).unwrap();
            let sp = Spectral::new(g);
            let r = sample(&g, |x| (2.0 * PI * x[0]).sin() + 0.3 * (2.0 * PI * (x[0] + 2.0 * x[1])).cos());
            let mom = sp.solve_divergence(&r);
            let back = centered_divergence(&g, &mom);
            for (a, b) in back.iter().zip(&r) {
                assert!((a - b).abs() < 1e-10, "d={d}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn wavenumber_band_is_symmetric_half_open() {
        let ks: Vec<i64> = (0..8).map(|j| wavenumber(j, 8)).collect();
        assert_eq!(ks, vec![0, 1, 2, 3, 4, -3, -2, -1]);
    }
}
