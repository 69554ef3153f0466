//! Heat-flow regularization of curves, `ρ^ν_t = ρ_t * τ_{νt(1-t)}`, with the
//! momentum construction that keeps the regularized curve admissible, and a
//! verifier for the action/entropy inequalities it satisfies.
//!
//! For a source momentum `m_t = ρ_t c_t` the regularized momentum is
//! `m̂ = m_t * τ_{νt(1-t)}`; since the kernel time `νt(1-t)` moves, `m̂` alone
//! leaves a defect `-ν(t - 1/2) Δρ^ν` in the continuity equation, which the
//! correction `m^ν = m̂ + ν(t - 1/2) ∇ρ^ν` removes.

use serde::Serialize;

use crate::heat::heat_convolve_with;
use crate::measures::{
    entropy, fisher_info, kinetic_action, trapezoid, DensityCurve, GridDensity, VectorField,
};
use crate::spectral::Spectral;
use crate::{Error, Result};

/// A curve together with its heat-flow regularization.
#[derive(Clone, Debug, Serialize)]
pub struct RegularizedCurve {
    pub source: DensityCurve,
    pub nu: f64,
    pub curve: DensityCurve,
}

/// Kernel time `ν t (1 - t)`.
#[inline]
pub fn kernel_time(nu: f64, t: f64) -> f64 {
    nu * t * (1.0 - t)
}

fn half_time(curve: &DensityCurve, n: usize) -> f64 {
    (n as f64 + 0.5) * curve.dt()
}

pub fn regularize_curve(curve: &DensityCurve, nu: f64) -> Result<RegularizedCurve> {
    if nu < 0.0 || !nu.is_finite() {
        return Err(Error::Domain(format!("diffusivity must be nonnegative, got {nu}")));
    }
    if nu == 0.0 {
        return Ok(RegularizedCurve {
            source: curve.clone(),
            nu,
            curve: curve.clone(),
        });
    }
    let sp = Spectral::new(curve.grid);
    let times = curve.times();
    let densities = curve
        .densities
        .iter()
        .zip(&times)
        .map(|(rho, &t)| heat_convolve_with(&sp, rho, kernel_time(nu, t)))
        .collect::<Result<Vec<_>>>()?;
    let momenta = (0..curve.n_steps())
        .map(|n| corrected_momentum_with(&sp, curve, nu, n))
        .collect::<Result<Vec<_>>>()?;
    let mut out = DensityCurve::new(curve.grid, densities, momenta)?;
    // remove the O(Δt²) defect left by the time discretization
    out.project_momenta(&sp);
    Ok(RegularizedCurve {
        source: curve.clone(),
        nu,
        curve: out,
    })
}

/// `m̂ = m_{n+1/2} * τ_{ν t(1-t)}` at the half-step time.
pub fn regularize_momentum(curve: &DensityCurve, nu: f64, n: usize) -> VectorField {
    regularize_momentum_with(&Spectral::new(curve.grid), curve, nu, n)
}

fn regularize_momentum_with(sp: &Spectral, curve: &DensityCurve, nu: f64, n: usize) -> VectorField {
    let s = kernel_time(nu, half_time(curve, n));
    VectorField {
        components: curve.momenta[n]
            .components
            .iter()
            .map(|c| sp.heat(c, s))
            .collect(),
    }
}

/// Regularized density values at half-step `n`: the heat flow of the
/// time-averaged node densities.
fn regularized_midpoint(sp: &Spectral, curve: &DensityCurve, nu: f64, n: usize) -> Vec<f64> {
    sp.heat(&curve.midpoint_values(n), kernel_time(nu, half_time(curve, n)))
}

/// `ν (t - 1/2) ∇ρ^ν` at half-step `n`, computed spectrally.
pub fn velocity_correction(curve: &DensityCurve, nu: f64, n: usize) -> VectorField {
    velocity_correction_with(&Spectral::new(curve.grid), curve, nu, n)
}

fn velocity_correction_with(sp: &Spectral, curve: &DensityCurve, nu: f64, n: usize) -> VectorField {
    let t = half_time(curve, n);
    let w = nu * (t - 0.5);
    let rho = regularized_midpoint(sp, curve, nu, n);
    let mut field = VectorField {
        components: sp.gradient(&rho),
    };
    field.scale(w);
    field
}

/// Momentum `ρ^ν c^ν = m̂ + ν (t - 1/2) ∇ρ^ν` at half-step `n`.
pub fn corrected_velocity(curve: &DensityCurve, nu: f64, n: usize) -> Result<VectorField> {
    corrected_momentum_with(&Spectral::new(curve.grid), curve, nu, n)
}

fn corrected_momentum_with(sp: &Spectral, curve: &DensityCurve, nu: f64, n: usize) -> Result<VectorField> {
    if n >= curve.n_steps() {
        return Err(Error::Domain(format!("half-step {n} out of range")));
    }
    let mut m = regularize_momentum_with(sp, curve, nu, n);
    m.add_assign(&velocity_correction_with(sp, curve, nu, n));
    Ok(m)
}

/// Per half-step kinetic energies `((1/2) Σ |m̂|²/ρ^ν h^d, (1/2) Σ |m|²/ρ̄ h^d)`.
pub fn jensen_pairs(curve: &DensityCurve, nu: f64) -> Vec<(f64, f64)> {
    let sp = Spectral::new(curve.grid);
    let hd = curve.grid.cell_volume();
    let energy = |m: &VectorField, rho: &[f64]| -> f64 {
        0.5 * m
            .norm_sq()
            .iter()
            .zip(rho)
            .map(|(q, r)| if *r > 0.0 { q / r } else { 0.0 })
            .sum::<f64>()
            * hd
    };
    (0..curve.n_steps())
        .map(|n| {
            let hat = regularize_momentum_with(&sp, curve, nu, n);
            let rho_hat = regularized_midpoint(&sp, curve, nu, n);
            (energy(&hat, &rho_hat), energy(&curve.momenta[n], &curve.midpoint_values(n)))
        })
        .collect()
}

/// Every term of the four regularization inequalities on a discrete curve.
#[derive(Clone, Debug, Serialize)]
pub struct FundReport {
    pub nu: f64,
    pub c_const: f64,
    pub alpha: f64,
    /// `A(ρ)` of the source curve.
    pub action: f64,
    /// `A(ρ^ν)`.
    pub action_reg: f64,
    /// `(ν²/2) ∫ (t - 1/2)² ∫ |∇ log ρ^ν|² dρ^ν dt`.
    pub fisher_weighted: f64,
    /// `(ν²/8) ∫ ∫ |∇ log ρ^ν|² dρ^ν dt`.
    pub fisher_unweighted: f64,
    /// `ν ∫ H(ρ^ν_t) dt`.
    pub entropy_integral: f64,
    /// `ν (H(ρ_0) + H(ρ_1)) / 2`.
    pub endpoint_entropy: f64,
    /// `ν² ∫ t(1-t)/2 ∫ |∇ log ρ^ν|² dρ^ν dt`, the term the constant bounds.
    pub li_yau_term: f64,
    pub lhs_w: f64,
    pub rhs_w: f64,
    pub lhs_u: f64,
    pub rhs_u: f64,
    pub slack_w: f64,
    pub slack_u: f64,
    pub slack_w_alpha: f64,
    pub slack_u_alpha: f64,
    /// Allowed negative slack `1e-3 (1 + A(ρ))`.
    pub eps_grid: f64,
}

impl FundReport {
    pub fn min_slack(&self) -> f64 {
        self.slack_w
            .min(self.slack_u)
            .min(self.slack_w_alpha)
            .min(self.slack_u_alpha)
    }

    pub fn passes(&self) -> bool {
        self.min_slack() >= -self.eps_grid
    }
}

/// Verifies the weighted and unweighted inequalities (and their variants with
/// `α² ∫ F` added on both sides) for the regularization of `curve`.
pub fn verify_fund_inequalities(curve: &DensityCurve, nu: f64, c_const: f64, alpha: f64) -> Result<FundReport> {
    let action = kinetic_action(curve);
    if !action.is_finite() {
        return Err(Error::Domain("source curve has infinite action".into()));
    }
    let first = &curve.densities[0];
    let last = &curve.densities[curve.n_steps()];
    let (h0, h1) = (entropy(first), entropy(last));
    if !h0.is_finite() || !h1.is_finite() {
        return Err(Error::InvalidDensity("endpoint entropy is infinite".into()));
    }
    let reg = regularize_curve(curve, nu)?;
    let action_reg = kinetic_action(&reg.curve);
    let times = curve.times();
    let f_reg: Vec<f64> = reg.curve.densities.iter().map(fisher_info).collect();
    let f_src: Vec<f64> = curve.densities.iter().map(fisher_info).collect();
    let h_reg: Vec<f64> = reg.curve.densities.iter().map(entropy).collect();
    let weighted: Vec<f64> = f_reg
        .iter()
        .zip(&times)
        .map(|(f, t)| (t - 0.5).powi(2) * 8.0 * f)
        .collect();
    let bridge: Vec<f64> = f_reg
        .iter()
        .zip(&times)
        .map(|(f, t)| 0.5 * t * (1.0 - t) * 8.0 * f)
        .collect();
    let fisher_weighted = 0.5 * nu * nu * trapezoid(&weighted);
    let fisher_unweighted = nu * nu * trapezoid(&f_reg);
    let entropy_integral = nu * trapezoid(&h_reg);
    let endpoint_entropy = 0.5 * nu * (h0 + h1);
    let lhs_w = action_reg + fisher_weighted + entropy_integral;
    let rhs_w = action + endpoint_entropy;
    let lhs_u = action_reg + fisher_unweighted + entropy_integral;
    let rhs_u = action + endpoint_entropy + nu * c_const;
    let a2 = alpha * alpha;
    let fa_reg = a2 * trapezoid(&f_reg);
    let fa_src = a2 * trapezoid(&f_src);
    Ok(FundReport {
        nu,
        c_const,
        alpha,
        action,
        action_reg,
        fisher_weighted,
        fisher_unweighted,
        entropy_integral,
        endpoint_entropy,
        li_yau_term: nu * nu * trapezoid(&bridge),
        lhs_w,
        rhs_w,
        lhs_u,
        rhs_u,
        slack_w: rhs_w - lhs_w,
        slack_u: rhs_u - lhs_u,
        slack_w_alpha: (rhs_w + fa_src) - (lhs_w + fa_reg),
        slack_u_alpha: (rhs_u + fa_src) - (lhs_u + fa_reg),
        eps_grid: 1e-3 * (1.0 + action),
    })
}

/// The constant used for the unweighted inequality in dimension `d`.
pub fn default_constant(d: usize) -> f64 {
    d as f64 / 8.0
}

/// Entropy-free sanity check: `ρ^ν` of a constant curve is the curve itself.
pub fn is_fixed_point(rho: &GridDensity, nu: f64, n_t: usize) -> Result<bool> {
    let c = DensityCurve::constant(rho, n_t);
    let reg = regularize_curve(&c, nu)?;
    Ok(reg
        .curve
        .densities
        .iter()
        .all(|d| d.l1_distance(rho) < 1e-12))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curves::{random_smooth_curve, translation_curve};
    use crate::measures::continuity_residual;
    use crate::rng::stream_rng;
    use crate::torus::TorusGrid;

    #[test]
    fn zero_noise_is_identity() {
        let g = TorusGrid::line(32).unwrap();
        let c = random_smooth_curve(&g, 8, &mut stream_rng(3, "reg", 0)).unwrap();
        let reg = regularize_curve(&c, 0.0).unwrap();
        assert_eq!(reg.curve, c);
        assert!(regularize_curve(&c, -0.1).is_err());
    }

    #[test]
    fn uniform_is_fixed() {
        let g = TorusGrid::new(2, 8).unwrap();
        assert!(is_fixed_point(&GridDensity::uniform(&g), 0.3, 4).unwrap());
    }

    #[test]
    fn endpoints_bitwise_and_admissible() {
        let g = TorusGrid::line(64).unwrap();
        let mut rng = stream_rng(3, "reg", 1);
        for nu in [0.05, 0.2] {
            let c = random_smooth_curve(&g, 16, &mut rng).unwrap();
            let reg = regularize_curve(&c, nu).unwrap();
            assert_eq!(reg.curve.densities[0].mass(), c.densities[0].mass());
            assert_eq!(reg.curve.densities[16].mass(), c.densities[16].mass());
            assert!(continuity_residual(&reg.curve) <= 1e-7);
        }
    }

    #[test]
    fn correction_alone_nearly_closes_continuity() {
        // without projection the defect is only the time-discretization error
        let g = TorusGrid::line(64).unwrap();
        let c = random_smooth_curve(&g, 64, &mut stream_rng(4, "reg", 0)).unwrap();
        let sp = Spectral::new(g);
        let nu = 0.1;
        let dens: Vec<GridDensity> = c
            .densities
            .iter()
            .zip(c.times())
            .map(|(r, t)| heat_convolve_with(&sp, r, kernel_time(nu, t)).unwrap())
            .collect();
        let with: Vec<VectorField> = (0..64).map(|n| corrected_velocity(&c, nu, n).unwrap()).collect();
        let without: Vec<VectorField> = (0..64).map(|n| regularize_momentum(&c, nu, n)).collect();
        let r_with = continuity_residual(&DensityCurve::new(g, dens.clone(), with).unwrap());
        let r_without = continuity_residual(&DensityCurve::new(g, dens, without).unwrap());
        assert!(r_with < 0.05 * r_without, "{r_with} vs {r_without}");
    }

    #[test]
    fn correction_vanishes_at_midtime_and_for_uniform() {
        let g = TorusGrid::line(32).unwrap();
        let c = random_smooth_curve(&g, 9, &mut stream_rng(5, "reg", 0)).unwrap();
        // odd N_t puts half-step 4 exactly at t = 1/2
        assert_eq!(velocity_correction(&c, 0.2, 4).max_abs(), 0.0);
        let u = DensityCurve::constant(&GridDensity::uniform(&g), 6);
        for n in 0..6 {
            assert!(velocity_correction(&u, 0.2, n).max_abs() < 1e-14);
        }
    }

    #[test]
    fn correction_flips_under_time_reversal() {
        let g = TorusGrid::line(32).unwrap();
        let rho = GridDensity::wrapped_gaussian(&g, &[0.4], 0.1).unwrap();
        // time-symmetric curve: out and back
        let go = translation_curve(&rho, &[0.25], 4).unwrap();
        let mut dens = go.densities.clone();
        dens.extend(go.densities.iter().rev().skip(1).cloned());
        let c = DensityCurve::from_densities(dens).unwrap();
        let r = c.reversed();
        for n in 0..8 {
            let a = velocity_correction(&c, 0.2, n);
            let b = velocity_correction(&r, 0.2, 7 - n);
            for (x, y) in a.components[0].iter().zip(&b.components[0]) {
                assert!((x + y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn jensen_contraction_per_step() {
        let g = TorusGrid::line(48).unwrap();
        let mut rng = stream_rng(6, "reg", 0);
        for _ in 0..20 {
            let c = random_smooth_curve(&g, 8, &mut rng).unwrap();
            for (hat, src) in jensen_pairs(&c, 0.1) {
                assert!(hat <= src * (1.0 + 1e-12) + 1e-15);
            }
        }
        let zero = DensityCurve::constant(&GridDensity::uniform(&g), 3);
        assert_eq!(regularize_momentum(&zero, 0.1, 1).max_abs(), 0.0);
    }

    #[test]
    fn translating_uniform_is_tight() {
        let g = TorusGrid::line(32).unwrap();
        let c = translation_curve(&GridDensity::uniform(&g), &[0.3], 8).unwrap();
        let hat = regularize_momentum(&c, 0.2, 3);
        assert!(hat.components[0].iter().all(|v| (v - 0.3).abs() < 1e-14));
        let rep = verify_fund_inequalities(&c, 0.2, default_constant(1), 0.2).unwrap();
        assert!(rep.slack_w.abs() < 1e-10);
    }

    #[test]
    fn constant_uniform_has_zero_slack() {
        let g = TorusGrid::line(16).unwrap();
        let c = DensityCurve::constant(&GridDensity::uniform(&g), 4);
        let rep = verify_fund_inequalities(&c, 0.1, 0.0, 0.1).unwrap();
        assert_eq!(rep.min_slack(), 0.0);
    }

    #[test]
    fn time_weight_identity() {
        for n in 0..=64 {
            let t = n as f64 / 64.0;
            assert!(((t - 0.5).powi(2) + t * (1.0 - t) - 0.25).abs() < 1e-16);
        }
    }

    #[test]
    fn slack_shrinks_with_noise() {
        let g = TorusGrid::line(64).unwrap();
        let c = random_smooth_curve(&g, 16, &mut stream_rng(8, "reg", 0)).unwrap();
        let slacks: Vec<f64> = [0.2, 0.05, 0.01, 0.001]
            .iter()
            .map(|&nu| verify_fund_inequalities(&c, nu, default_constant(1), nu).unwrap().slack_u)
            .collect();
        assert!(slacks[3].abs() < slacks[0].abs());
        assert!(slacks[3].abs() < 1e-3);
    }
}
