//! Brownian motion and bridges on the torus at a finite set of times.
//!
//! Paths live at `t_n = n/N`. A torus bridge from `x` to `y` is sampled as a
//! mixture over lattice shifts `l` of projected Euclidean bridges from `x̄` to
//! `ȳ + l`, with weights `∝ exp(-|ȳ - x̄ + l|²/(2ν))`. The translated bridge
//! `B^ν_ω` adds the projection of a Euclidean bridge pinned at `0` to a path
//! `ω`, which leaves both endpoints of `ω` in place.
//!
//! The exact checks here (partition function, Cameron–Martin entropy,
//! exponential moments of `A_N` under the reversible motion) are closed-form
//! or quadrature; the bridge-entropy bound is Monte Carlo with a reported
//! confidence half-width.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::heat::{gaussian_bound_ratio, log_sum_exp, log_theta_1d, theta_kernel};
use crate::quadrature::gauss_legendre;
use crate::rng::stream_rng;
use crate::torus::{centered, geodesic_dist_sq, wrap_scalar, TorusGrid};
use crate::{Error, Result};

/// Shift weights below this fraction of the total are dropped.
const SHIFT_TAIL: f64 = 1e-16;

/// Two-sided 95% normal quantile used for Monte-Carlo half-widths.
const Z95: f64 = 1.959_963_984_540_054;

/// Samples per rayon work item in Monte-Carlo loops; each item owns one stream.
const CHUNK: usize = 4096;

/// A torus path sampled at `t_n = n/N`, `n = 0..=N`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscretePath {
    d: usize,
    points: Vec<[f64; 2]>,
    /// Unwrapped representative in `R^d`, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lift: Option<Vec<[f64; 2]>>,
}

impl DiscretePath {
    pub fn new(d: usize, points: Vec<[f64; 2]>) -> Result<Self> {
        Self::check_shape(d, &points)?;
        let points = points
            .into_iter()
            .map(|p| {
                let mut q = [0.0; 2];
                for a in 0..d {
                    q[a] = wrap_scalar(p[a]);
                }
                q
            })
            .collect();
        Ok(Self { d, points, lift: None })
    }

    /// Path whose points are the projections of `lift`.
    pub fn from_lift(d: usize, lift: Vec<[f64; 2]>) -> Result<Self> {
        let mut path = Self::new(d, lift.clone())?;
        path.lift = Some(lift);
        Ok(path)
    }

    /// 1D convenience constructor.
    pub fn line(points: &[f64]) -> Result<Self> {
        Self::new(1, points.iter().map(|&x| [x, 0.0]).collect())
    }

    fn check_shape(d: usize, points: &[[f64; 2]]) -> Result<()> {
        if !(1..=2).contains(&d) {
            return Err(Error::UnsupportedDimension(d));
        }
        if points.len() < 2 {
            return Err(Error::Domain("a path needs at least two time points".into()));
        }
        if points.iter().any(|p| p[..d].iter().any(|v| !v.is_finite())) {
            return Err(Error::Domain("non-finite path coordinate".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Number of steps `N`.
    pub fn n_steps(&self) -> usize {
        self.points.len() - 1
    }

    pub fn point(&self, n: usize) -> &[f64] {
        &self.points[n][..self.d]
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn lift(&self) -> Option<&[[f64; 2]]> {
        self.lift.as_deref()
    }

    pub fn start(&self) -> &[f64] {
        self.point(0)
    }

    pub fn end(&self) -> &[f64] {
        self.point(self.n_steps())
    }
}

/// `A_N(ω) = (N/2) Σ dist²(ω_{t_n}, ω_{t_{n+1}})`.
pub fn discrete_action_an(path: &DiscretePath) -> f64 {
    let n = path.n_steps();
    0.5 * n as f64
        * (0..n)
            .map(|k| geodesic_dist_sq(path.point(k), path.point(k + 1)))
            .sum::<f64>()
}

/// `Â_N(ω) = A_N(ω) - dist²(ω_0, ω_1)/2`, nonnegative by Cauchy–Schwarz.
pub fn hat_action(path: &DiscretePath) -> f64 {
    discrete_action_an(path) - 0.5 * geodesic_dist_sq(path.start(), path.end())
}

fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Brownian motion with diffusivity `ν` at `N + 1` times. With `x0 = None`
/// the start is uniform (the reversible motion).
pub fn sample_brownian<R: Rng>(nu: f64, n: usize, d: usize, x0: Option<&[f64]>, rng: &mut R) -> Result<DiscretePath> {
    if !(nu > 0.0 && nu.is_finite()) {
        return Err(Error::Domain(format!("diffusivity must be positive, got {nu}")));
    }
    if n == 0 {
        return Err(Error::Domain("need at least one step".into()));
    }
    let mut start = [0.0; 2];
    for (a, s) in start.iter_mut().enumerate().take(d) {
        *s = match x0 {
            Some(x) => *x.get(a).ok_or_else(|| Error::Domain("start point has the wrong dimension".into()))?,
            None => rng.random::<f64>(),
        };
    }
    let sd = (nu / n as f64).sqrt();
    let mut lift = Vec::with_capacity(n + 1);
    lift.push(start);
    for k in 0..n {
        let mut next = lift[k];
        for v in next.iter_mut().take(d) {
            *v += sd * gaussian(rng);
        }
        lift.push(next);
    }
    DiscretePath::from_lift(d, lift)
}

/// Euclidean bridge from `a` to `b` (one axis) at `t_n = n/N`, by the
/// conditional-Gaussian recursion. Both endpoints are exact.
fn euclidean_bridge<R: Rng>(nu: f64, n: usize, a: f64, b: f64, rng: &mut R) -> Vec<f64> {
    let tau = 1.0 / n as f64;
    let mut z = Vec::with_capacity(n + 1);
    z.push(a);
    for k in 0..n.saturating_sub(1) {
        let t = k as f64 * tau;
        let rest = 1.0 - t;
        let cur = z[k];
        let mean = cur + (b - cur) * tau / rest;
        let var = nu * tau * (rest - tau) / rest;
        z.push(mean + var.sqrt() * gaussian(rng));
    }
    z.push(b);
    z
}

/// Lattice-shift law of a torus bridge along one axis.
#[derive(Clone, Debug, Serialize)]
pub struct ShiftWeights {
    pub shifts: Vec<i64>,
    pub weights: Vec<f64>,
}

impl ShiftWeights {
    /// Weights `∝ exp(-(ȳ - x̄ + l)²/(2ν))` with `x̄, ȳ ∈ [0, 1)`.
    pub fn new(nu: f64, x: f64, y: f64) -> Self {
        let delta = wrap_scalar(y) - wrap_scalar(x);
        let center = -(delta.round() as i64);
        // |δ + l| beyond this carries relative weight below SHIFT_TAIL
        let reach = (2.0 * nu * (1.0 / SHIFT_TAIL).ln()).sqrt().ceil() as i64 + 1;
        let shifts: Vec<i64> = (center - reach..=center + reach).collect();
        let logw: Vec<f64> = shifts
            .iter()
            .map(|&l| -(delta + l as f64).powi(2) / (2.0 * nu))
            .collect();
        let lz = log_sum_exp(&logw);
        let weights = logw.iter().map(|v| (v - lz).exp()).collect();
        Self { shifts, weights }
    }

    pub fn weight(&self, l: i64) -> f64 {
        self.shifts
            .iter()
            .position(|&s| s == l)
            .map_or(0.0, |i| self.weights[i])
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> i64 {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (l, w) in self.shifts.iter().zip(&self.weights) {
            acc += w;
            if u < acc {
                return *l;
            }
        }
        *self.shifts.last().expect("nonempty shift table")
    }
}

/// Sampler for the torus bridge `R^{ν,x,y}`.
#[derive(Clone, Debug, Serialize)]
pub struct BridgeSampler {
    pub nu: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub axes: Vec<ShiftWeights>,
}

impl BridgeSampler {
    pub fn new(nu: f64, x: &[f64], y: &[f64]) -> Result<Self> {
        if !(nu > 0.0 && nu.is_finite()) {
            return Err(Error::Domain(format!("diffusivity must be positive, got {nu}")));
        }
        if x.len() != y.len() || !(1..=2).contains(&x.len()) {
            return Err(Error::Domain("bridge endpoints must share dimension 1 or 2".into()));
        }
        let x: Vec<f64> = x.iter().map(|&v| wrap_scalar(v)).collect();
        let y: Vec<f64> = y.iter().map(|&v| wrap_scalar(v)).collect();
        let axes = x.iter().zip(&y).map(|(&a, &b)| ShiftWeights::new(nu, a, b)).collect();
        Ok(Self { nu, x, y, axes })
    }

    pub fn sample<R: Rng>(&self, n: usize, rng: &mut R) -> Result<DiscretePath> {
        if n == 0 {
            return Err(Error::Domain("need at least one step".into()));
        }
        let d = self.x.len();
        let mut lift = vec![[0.0; 2]; n + 1];
        for a in 0..d {
            let l = self.axes[a].sample(rng) as f64;
            let z = euclidean_bridge(self.nu, n, self.x[a], self.y[a] + l, rng);
            for (p, v) in lift.iter_mut().zip(z) {
                p[a] = v;
            }
        }
        let mut path = DiscretePath::from_lift(d, lift)?;
        // pin the endpoints against wrap round-off
        path.points[0][..d].copy_from_slice(&self.x);
        path.points[n][..d].copy_from_slice(&self.y);
        Ok(path)
    }
}

/// Draws one torus bridge path from `x` to `y`.
pub fn sample_bridge_torus<R: Rng>(nu: f64, x: &[f64], y: &[f64], n: usize, rng: &mut R) -> Result<DiscretePath> {
    BridgeSampler::new(nu, x, y)?.sample(n, rng)
}

/// `Z^{ν,x,y} = Σ_l exp(-|ȳ - x̄ + l|²/(2ν))`, cross-checked against
/// `(2πν)^{d/2} τ_ν(y - x)`.
pub fn bridge_partition_z(nu: f64, x: &[f64], y: &[f64]) -> Result<f64> {
    if !(nu > 0.0 && nu.is_finite()) {
        return Err(Error::Domain(format!("diffusivity must be positive, got {nu}")));
    }
    if x.len() != y.len() {
        return Err(Error::Domain("endpoints differ in dimension".into()));
    }
    let reach = 6.max((6.0 * nu.sqrt()).ceil() as i64 + 2);
    let mut z = 1.0;
    for (&a, &b) in x.iter().zip(y) {
        let delta = wrap_scalar(b) - wrap_scalar(a);
        z *= (-reach..=reach)
            .map(|l| (-(delta + l as f64).powi(2) / (2.0 * nu)).exp())
            .sum::<f64>();
    }
    let diff: Vec<f64> = x.iter().zip(y).map(|(a, b)| b - a).collect();
    let via_kernel = (2.0 * std::f64::consts::PI * nu).powf(x.len() as f64 / 2.0) * theta_kernel(nu, &diff)?;
    let rel = (z - via_kernel).abs() / z;
    if rel > 1e-10 {
        return Err(Error::Consistency(format!(
            "partition function {z} disagrees with heat kernel {via_kernel} (relative {rel:e})"
        )));
    }
    Ok(z)
}

/// Which exponential moment of `A_N` to evaluate.
#[derive(Clone, Debug)]
pub enum MomentMode {
    /// Reversible motion, exact by quadrature.
    Reversible { d: usize },
    /// Torus bridge from `x` to `y`, Monte Carlo.
    Bridge {
        x: Vec<f64>,
        y: Vec<f64>,
        samples: usize,
        seed: u64,
    },
}

#[derive(Clone, Debug, Serialize)]
pub struct MomentReport {
    pub alpha: f64,
    pub nu: f64,
    pub n: usize,
    /// `∫ exp(α A_N/ν) dR`.
    pub lhs: f64,
    /// 95% half-width (zero for the exact mode).
    pub ci: f64,
    /// `(1-α)^{-Nd/2}`, times `exp(α dist²(x,y)/(2ν))` in bridge mode.
    pub rhs: f64,
    /// `lhs / rhs`: at most one in reversible mode, a measured surrogate of
    /// the dimensional constant in bridge mode.
    pub ratio: f64,
}

/// Nodes of the Gauss–Legendre rule used per unit cell of the one-step integral.
pub const MOMENT_NODES: usize = 2001;

/// `∫_R exp(α dist²(0, π(y))/(2s)) N(0, s)(dy)` for one axis.
fn one_step_moment(alpha: f64, s: f64, nodes: &[f64], weights: &[f64]) -> f64 {
    let norm = 1.0 / (2.0 * std::f64::consts::PI * s).sqrt();
    let cell = |k: i64| -> f64 {
        // y = k + u, u ∈ [-1/2, 1/2], dist(0, π(y)) = |u|
        nodes
            .iter()
            .zip(weights)
            .map(|(&x, &w)| {
                let u = 0.5 * x;
                let y = k as f64 + u;
                w * 0.5 * ((alpha * u * u - y * y) / (2.0 * s)).exp()
            })
            .sum::<f64>()
            * norm
    };
    let mut total = cell(0);
    let mut k = 1;
    loop {
        let add = cell(k) + cell(-k);
        total += add;
        if add <= 1e-20 * total || k > 10_000 {
            break;
        }
        k += 1;
    }
    total
}

pub fn exp_moment_check(alpha: f64, nu: f64, n: usize, mode: &MomentMode) -> Result<MomentReport> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if !(nu > 0.0 && nu < 1.0) {
        return Err(Error::Domain(format!("nu must lie in (0, 1), got {nu}")));
    }
    if n == 0 {
        return Err(Error::Domain("need at least one step".into()));
    }
    match mode {
        MomentMode::Reversible { d } => {
            let (nodes, weights) = gauss_legendre(MOMENT_NODES);
            let step = one_step_moment(alpha, nu / n as f64, &nodes, &weights);
            let exponent = (n * d) as i32;
            let lhs = step.powi(exponent);
            let rhs = (1.0 - alpha).powf(-((n * d) as f64) / 2.0);
            Ok(MomentReport {
                alpha,
                nu,
                n,
                lhs,
                ci: 0.0,
                rhs,
                ratio: lhs / rhs,
            })
        }
        MomentMode::Bridge { x, y, samples, seed } => {
            let sampler = BridgeSampler::new(nu, x, y)?;
            let (mean, half) = monte_carlo(*samples, *seed, "exp-moment", |rng| {
                let path = sampler.sample(n, rng)?;
                Ok((alpha * discrete_action_an(&path) / nu).exp())
            })?;
            let d = x.len();
            let rhs = (1.0 - alpha).powf(-((n * d) as f64) / 2.0)
                * (alpha * geodesic_dist_sq(x, y) / (2.0 * nu)).exp();
            Ok(MomentReport {
                alpha,
                nu,
                n,
                lhs: mean,
                ci: half,
                rhs,
                ratio: mean / rhs,
            })
        }
    }
}

/// Mean and 95% half-width of `f` over `samples` draws, split into fixed
/// chunks with one random stream each so the result is thread-count free.
fn monte_carlo<F>(samples: usize, seed: u64, experiment: &str, f: F) -> Result<(f64, f64)>
where
    F: Fn(&mut rand_chacha::ChaCha8Rng) -> Result<f64> + Sync,
{
    if samples < 2 {
        return Err(Error::SampleSize("need at least two samples".into()));
    }
    let chunks = samples.div_ceil(CHUNK);
    let partial: Vec<(f64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream_rng(seed, experiment, c as u64);
            let count = CHUNK.min(samples - c * CHUNK);
            let (mut s, mut s2) = (0.0, 0.0);
            for _ in 0..count {
                let v = f(&mut rng)?;
                s += v;
                s2 += v * v;
            }
            Ok((s, s2))
        })
        .collect::<Result<Vec<_>>>()?;
    let (s, s2) = partial.iter().fold((0.0, 0.0), |acc, p| (acc.0 + p.0, acc.1 + p.1));
    let nf = samples as f64;
    let mean = s / nf;
    let var = ((s2 - nf * mean * mean) / (nf - 1.0)).max(0.0);
    Ok((mean, Z95 * (var / nf).sqrt()))
}

#[derive(Clone, Debug, Serialize)]
pub struct CameronMartin {
    /// Relative entropy between the shifted and unshifted discrete bridge
    /// laws, from the dense covariance.
    pub exact_entropy: f64,
    /// `(N/2) Σ |Δα_n|²`.
    pub half_action: f64,
}

/// Relative entropy of a Euclidean bridge translated by the loop `α` (with
/// `α_0 = α_N = 0`) against the untranslated one, at the interior times.
pub fn cameron_martin_entropy(alpha_loop: &[[f64; 2]], d: usize, nu: f64) -> Result<CameronMartin> {
    if !(nu > 0.0 && nu.is_finite()) {
        return Err(Error::Domain(format!("diffusivity must be positive, got {nu}")));
    }
    if alpha_loop.len() < 2 {
        return Err(Error::Domain("loop needs at least two time points".into()));
    }
    let n = alpha_loop.len() - 1;
    let first = alpha_loop[0];
    let last = alpha_loop[n];
    if first[..d].iter().chain(&last[..d]).any(|&v| v != 0.0) {
        return Err(Error::Domain("loop must vanish at both endpoints".into()));
    }
    let half_action = 0.5
        * n as f64
        * alpha_loop
            .windows(2)
            .map(|w| (0..d).map(|a| (w[1][a] - w[0][a]).powi(2)).sum::<f64>())
            .sum::<f64>();
    let interior = n - 1;
    if interior == 0 {
        return Ok(CameronMartin {
            exact_entropy: 0.0,
            half_action,
        });
    }
    // bridge covariance ν (min(s, t) - s t), identical on every axis
    let cov = DMatrix::from_fn(interior, interior, |i, j| {
        let (s, t) = ((i + 1) as f64 / n as f64, (j + 1) as f64 / n as f64);
        nu * (s.min(t) - s * t)
    });
    let chol = cov
        .cholesky()
        .ok_or_else(|| Error::Consistency("bridge covariance is not positive definite".into()))?;
    let mut exact_entropy = 0.0;
    for a in 0..d {
        let shift = DVector::from_iterator(interior, (1..n).map(|k| alpha_loop[k][a]));
        let solved = chol.solve(&shift);
        exact_entropy += 0.5 * shift.dot(&solved);
    }
    let gap = (nu * exact_entropy - half_action).abs();
    if gap > 1e-10 * (1.0 + half_action) {
        return Err(Error::Consistency(format!(
            "Cameron–Martin mismatch: nu*H = {} vs half action {half_action}",
            nu * exact_entropy
        )));
    }
    Ok(CameronMartin {
        exact_entropy,
        half_action,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct BridgeEntropyReport {
    pub nu: f64,
    pub samples: usize,
    /// Monte-Carlo estimate of `ν H(B^ν_ω | R^{ν,ω_0,ω_1})` at the path's times.
    pub estimate: f64,
    /// 95% half-width of the estimate.
    pub ci: f64,
    pub action_an: f64,
    pub dist_sq: f64,
    /// `log r_max(ν)`, the measured heat-kernel constant.
    pub c_emp: f64,
    /// `A_N(ω) - dist²/2 + C_emp ν`.
    pub bound: f64,
}

impl BridgeEntropyReport {
    pub fn holds(&self) -> bool {
        self.estimate <= self.bound + 3.0 * self.ci
    }
}

/// `log` of the density at the interior times of the projected Euclidean
/// bridge `0 → 0` evaluated at wrapped offsets `u_1..u_{N-1}` (one axis):
/// a sum over lifts, done as a transfer product over bounded lattice shifts.
fn log_wrapped_bridge_density(nu: f64, offsets: &[f64]) -> f64 {
    let n = offsets.len() + 1;
    let s = nu / n as f64;
    let reach = 2 + (6.0 * (nu / 4.0).sqrt()).ceil() as i64;
    let lifts: Vec<i64> = (-reach..=reach).collect();
    let log_g = |dz: f64| -0.5 * (2.0 * std::f64::consts::PI * s).ln() - dz * dz / (2.0 * s);
    let mut pos: Vec<f64> = Vec::with_capacity(n + 1);
    pos.push(0.0);
    pos.extend(offsets.iter().map(|&u| centered(u)));
    pos.push(0.0);
    // state: log weight of each lift at the current time
    let mut state: Vec<f64> = lifts.iter().map(|&l| if l == 0 { 0.0 } else { f64::NEG_INFINITY }).collect();
    for k in 0..n {
        let last = k + 1 == n;
        let next: Vec<f64> = lifts
            .iter()
            .map(|&l2| {
                if last && l2 != 0 {
                    return f64::NEG_INFINITY;
                }
                let terms: Vec<f64> = lifts
                    .iter()
                    .zip(&state)
                    .map(|(&l1, &w)| w + log_g(pos[k + 1] + l2 as f64 - pos[k] - l1 as f64))
                    .collect();
                log_sum_exp(&terms)
            })
            .collect();
        state = next;
    }
    let end = state[lifts.iter().position(|&l| l == 0).expect("zero shift present")];
    // divide by the endpoint density g_ν(0)
    end + 0.5 * (2.0 * std::f64::consts::PI * nu).ln()
}

/// `ν H(B^ν_ω | R^{ν,ω_0,ω_1})` at the path's times by Monte Carlo, and the
/// bound `A_N(ω) - dist²(ω_0, ω_1)/2 + C ν` with `C = log r_max(ν)` measured
/// on `grid`.
pub fn torus_bridge_entropy_check(
    path: &DiscretePath,
    nu: f64,
    samples: usize,
    seed: u64,
    grid: &TorusGrid,
) -> Result<BridgeEntropyReport> {
    if !(nu > 0.0 && nu <= 1.0) {
        return Err(Error::Domain(format!("nu must lie in (0, 1], got {nu}")));
    }
    let d = path.dim();
    if grid.dim() != d {
        return Err(Error::GridMismatch("constant grid and path differ in dimension".into()));
    }
    let n = path.n_steps();
    let (_, r_max) = gaussian_bound_ratio(grid, nu)?;
    let c_emp = r_max.ln();
    let action_an = discrete_action_an(path);
    let dist_sq = geodesic_dist_sq(path.start(), path.end());
    let bound = action_an - 0.5 * dist_sq + c_emp * nu;
    let s = nu / n as f64;
    let log_ref_end: f64 = (0..d)
        .map(|a| log_theta_1d(nu, path.end()[a] - path.start()[a]))
        .sum();
    let (mean, half) = monte_carlo(samples, seed, "bridge-entropy", |rng| {
        let mut log_ratio = 0.0;
        for a in 0..d {
            let beta = euclidean_bridge(nu, n, 0.0, 0.0, rng);
            let z: Vec<f64> = (0..=n).map(|k| wrap_scalar(path.point(k)[a] + beta[k])).collect();
            let offsets: Vec<f64> = (1..n).map(|k| z[k] - path.point(k)[a]).collect();
            let log_b = log_wrapped_bridge_density(nu, &offsets);
            let log_r: f64 = (0..n).map(|k| log_theta_1d(s, z[k + 1] - z[k])).sum();
            log_ratio += log_b - log_r;
        }
        Ok(nu * (log_ratio + log_ref_end))
    })?;
    if half > 0.1 * bound.abs().max(f64::MIN_POSITIVE) {
        return Err(Error::SampleSize(format!(
            "confidence half-width {half:e} exceeds 10% of the bound {bound:e}; raise the sample count"
        )));
    }
    Ok(BridgeEntropyReport {
        nu,
        samples,
        estimate: mean,
        ci: half,
        action_an,
        dist_sq,
        c_emp,
        bound,
    })
}

/// Replaces each weighted path by samples of its translated bridge `B^ν_ω`.
/// The sample budget `k` is split by largest remainder; each noisy path
/// carries an equal share of its parent's weight. Path `i` draws from stream
/// `i` of `seed`.
pub fn build_recovery_flow(paths: &[(f64, DiscretePath)], nu: f64, k: usize, seed: u64) -> Result<Vec<(f64, DiscretePath)>> {
    if !(nu >= 0.0 && nu.is_finite()) {
        return Err(Error::Domain(format!("diffusivity must be nonnegative, got {nu}")));
    }
    let total: f64 = paths.iter().map(|p| p.0).sum();
    if paths.is_empty() || (total - 1.0).abs() > 1e-10 || paths.iter().any(|p| p.0 < 0.0) {
        return Err(Error::Domain("path weights must be nonnegative and sum to one".into()));
    }
    if k < paths.len() {
        return Err(Error::Domain("sample budget smaller than the number of paths".into()));
    }
    let budget = largest_remainder(paths.iter().map(|p| p.0), k);
    let out: Vec<Vec<(f64, DiscretePath)>> = paths
        .par_iter()
        .zip(budget.par_iter())
        .enumerate()
        .map(|(i, ((w, path), &count))| {
            let mut rng = stream_rng(seed, "recovery", i as u64);
            let d = path.dim();
            let n = path.n_steps();
            (0..count)
                .map(|_| {
                    let mut pts = path.points.clone();
                    if nu > 0.0 {
                        for a in 0..d {
                            let beta = euclidean_bridge(nu, n, 0.0, 0.0, &mut rng);
                            for (p, b) in pts.iter_mut().zip(beta) {
                                p[a] = wrap_scalar(p[a] + b);
                            }
                        }
                    }
                    Ok((w / count as f64, DiscretePath::new(d, pts)?))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(out.into_iter().flatten().collect())
}

/// Integer shares of `k` proportional to `weights`, every share at least one.
fn largest_remainder(weights: impl Iterator<Item = f64>, k: usize) -> Vec<usize> {
    let w: Vec<f64> = weights.collect();
    let spare = k - w.len();
    let exact: Vec<f64> = w.iter().map(|x| x * spare as f64).collect();
    let mut share: Vec<usize> = exact.iter().map(|x| x.floor() as usize + 1).collect();
    let left = k - share.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..w.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(left) {
        share[i] += 1;
    }
    share
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Upper 0.001 quantile of chi-square with 15 degrees of freedom.
    const CHI2_15_999: f64 = 37.697;

    fn chi_square(counts: &[usize], probs: &[f64]) -> f64 {
        let total: usize = counts.iter().sum();
        counts
            .iter()
            .zip(probs)
            .map(|(&c, &p)| {
                let e = p * total as f64;
                (c as f64 - e).powi(2) / e
            })
            .sum()
    }

    #[test]
    fn action_examples() {
        assert_eq!(discrete_action_an(&DiscretePath::line(&[0.3; 5]).unwrap()), 0.0);
        let p = DiscretePath::line(&[0.0, 0.25, 0.5]).unwrap();
        assert!((discrete_action_an(&p) - 0.125).abs() < 1e-15);
        assert!(hat_action(&p).abs() < 1e-15);
        // wrap-around step counts the short way
        let q = DiscretePath::line(&[0.9, 0.1]).unwrap();
        assert!((discrete_action_an(&q) - 0.02).abs() < 1e-15);
    }

    #[test]
    fn action_increases_to_continuum() {
        use std::f64::consts::PI;
        // ω(t) = 0.3 + 0.1 sin 2πt, A = (0.2π)²/4
        let exact = (0.2 * PI).powi(2) / 4.0;
        let mut prev = 0.0;
        for n in [4, 8, 16, 32, 64, 128] {
            let pts: Vec<f64> = (0..=n)
                .map(|k| 0.3 + 0.1 * (2.0 * PI * k as f64 / n as f64).sin())
                .collect();
            let a = discrete_action_an(&DiscretePath::line(&pts).unwrap());
            assert!(a >= prev - 1e-15 && a <= exact + 1e-15);
            prev = a;
        }
        assert!(exact - prev < 1e-3);
    }

    proptest! {
        #[test]
        fn hat_action_nonnegative(pts in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0), 2..12)) {
            let p = DiscretePath::new(2, pts.iter().map(|&(a, b)| [a, b]).collect()).unwrap();
            prop_assert!(hat_action(&p) >= -1e-12);
        }
    }

    #[test]
    fn brownian_increment_variance() {
        let (nu, n) = (0.2, 4);
        let mut rng = stream_rng(11, "brownian", 0);
        let samples = 25_000;
        let mut incs = Vec::with_capacity(samples * n);
        for _ in 0..samples {
            let p = sample_brownian(nu, n, 1, Some(&[0.5]), &mut rng).unwrap();
            let lift = p.lift().unwrap();
            incs.extend(lift.windows(2).map(|w| w[1][0] - w[0][0]));
        }
        let k = incs.len() as f64;
        let var = incs.iter().map(|v| v * v).sum::<f64>() / k;
        let target = nu / n as f64;
        // the sample variance of a Gaussian has standard deviation σ²√(2/k)
        assert!((var - target).abs() < 3.0 * target * (2.0 / k).sqrt());
    }

    #[test]
    fn reversible_marginals_uniform() {
        let mut rng = stream_rng(12, "brownian", 0);
        let mut counts = [[0usize; 16]; 3];
        for _ in 0..20_000 {
            let p = sample_brownian(0.05, 2, 1, None, &mut rng).unwrap();
            for (n, c) in counts.iter_mut().enumerate() {
                c[(p.point(n)[0] * 16.0) as usize] += 1;
            }
        }
        for c in &counts {
            assert!(chi_square(c, &[1.0 / 16.0; 16]) < CHI2_15_999);
        }
    }

    #[test]
    fn small_noise_paths_collapse() {
        let nu = 1e-4;
        let mut rng = stream_rng(13, "brownian", 0);
        let far = (0..1000)
            .filter(|_| {
                let p = sample_brownian(nu, 8, 1, Some(&[0.2]), &mut rng).unwrap();
                (0..=8).any(|k| geodesic_dist_sq(p.point(k), &[0.2]).sqrt() > 5.0 * nu.sqrt())
            })
            .count();
        assert!(far <= 10);
    }

    #[test]
    fn bridge_endpoints_exact() {
        let s = BridgeSampler::new(0.3, &[0.1, 0.7], &[0.9, 0.2]).unwrap();
        let mut rng = stream_rng(14, "bridge", 0);
        for _ in 0..200 {
            let p = s.sample(5, &mut rng).unwrap();
            assert_eq!(p.start(), &[0.1, 0.7]);
            assert_eq!(p.end(), &[0.9, 0.2]);
        }
    }

    #[test]
    fn bridge_midpoint_law() {
        let (nu, x, y) = (0.2, 0.1, 0.6);
        let s = BridgeSampler::new(nu, &[x], &[y]).unwrap();
        let mut rng = stream_rng(15, "bridge", 0);
        let mut counts = [0usize; 16];
        for _ in 0..100_000 {
            let p = s.sample(2, &mut rng).unwrap();
            counts[(p.point(1)[0] * 16.0) as usize] += 1;
        }
        // exact density τ_{ν/2}(z - x) τ_{ν/2}(y - z) / τ_ν(y - x), integrated per bin
        let norm = theta_kernel(nu, &[y - x]).unwrap();
        let probs: Vec<f64> = (0..16)
            .map(|b| {
                crate::quadrature::integrate(
                    |z| {
                        theta_kernel(nu / 2.0, &[z - x]).unwrap() * theta_kernel(nu / 2.0, &[y - z]).unwrap() / norm
                    },
                    b as f64 / 16.0,
                    (b + 1) as f64 / 16.0,
                    40,
                )
            })
            .collect();
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        assert!(chi_square(&counts, &probs) < CHI2_15_999);
    }

    #[test]
    fn antipodal_shifts_balance() {
        let w = ShiftWeights::new(0.01, 0.0, 0.5);
        assert!((w.weight(0) - w.weight(-1)).abs() <= 1e-12);
        assert!((w.weights.iter().sum::<f64>() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn partition_function_examples() {
        let z = bridge_partition_z(0.1, &[0.3], &[0.3]).unwrap();
        let direct: f64 = (-6i32..=6).map(|l| (-(l * l) as f64 / 0.2).exp()).sum();
        assert!((z - direct).abs() < 1e-15);
        assert!((z - 1.013_475_9).abs() < 1e-7);
        let peak = (0..32)
            .map(|k| bridge_partition_z(0.1, &[0.0], &[k as f64 / 32.0]).unwrap())
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        assert_eq!(peak.0, 0);
        for nu in [0.01, 0.1, 0.5, 2.0] {
            for (x, y) in [([0.1, 0.2], [0.9, 0.5]), ([0.0, 0.0], [0.5, 0.5]), ([0.3, 0.3], [0.3, 0.4]), ([0.7, 0.1], [0.2, 0.8])] {
                let z = bridge_partition_z(nu, &x, &y).unwrap();
                let d: Vec<f64> = x.iter().zip(&y).map(|(a, b)| b - a).collect();
                let k = 2.0 * std::f64::consts::PI * nu * theta_kernel(nu, &d).unwrap();
                assert!(((z - k) / z).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn exp_moment_examples() {
        let r = exp_moment_check(0.5, 0.1, 2, &MomentMode::Reversible { d: 1 }).unwrap();
        assert!((r.rhs - 2.0).abs() < 1e-15);
        assert!(r.lhs <= r.rhs);
        let tiny = exp_moment_check(1e-9, 0.1, 2, &MomentMode::Reversible { d: 1 }).unwrap();
        assert!((tiny.lhs - 1.0).abs() < 1e-8 && (tiny.rhs - 1.0).abs() < 1e-8);
        let lhs: Vec<f64> = (1..10)
            .map(|k| exp_moment_check(k as f64 / 10.0, 0.1, 4, &MomentMode::Reversible { d: 1 }).unwrap().lhs)
            .collect();
        assert!(lhs.windows(2).all(|w| w[1] > w[0]));
        assert!(exp_moment_check(1.0, 0.1, 2, &MomentMode::Reversible { d: 1 }).is_err());
    }

    #[test]
    fn one_step_moment_matches_gaussian_when_wrap_is_negligible() {
        // for tiny variance the torus integral equals the Euclidean (1-α)^{-1/2}
        let (x, w) = gauss_legendre(MOMENT_NODES);
        let v = one_step_moment(0.5, 1e-3, &x, &w);
        assert!((v - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn bridge_moment_is_bounded() {
        let mode = MomentMode::Bridge {
            x: vec![0.1],
            y: vec![0.4],
            samples: 20_000,
            seed: 3,
        };
        let r = exp_moment_check(0.5, 0.1, 4, &mode).unwrap();
        assert!(r.ratio > 0.0 && r.ratio < 10.0, "{r:?}");
    }

    #[test]
    fn cameron_martin_examples() {
        let zero = cameron_martin_entropy(&[[0.0; 2]; 5], 1, 0.3).unwrap();
        assert_eq!((zero.exact_entropy, zero.half_action), (0.0, 0.0));
        for nu in [0.01, 0.5, 3.0] {
            let hat = cameron_martin_entropy(&[[0.0, 0.0], [0.1, 0.0], [0.0, 0.0]], 1, nu).unwrap();
            assert!((hat.half_action - 0.02).abs() < 1e-15);
            assert!((nu * hat.exact_entropy - 0.02).abs() < 1e-12);
        }
        let lp: Vec<[f64; 2]> = (0..=8)
            .map(|k| {
                let t = k as f64 / 8.0;
                if k % 8 == 0 {
                    return [0.0; 2];
                }
                [0.3 * (std::f64::consts::PI * t).sin(), t * (1.0 - t)]
            })
            .collect();
        let mut doubled = lp.clone();
        for p in &mut doubled {
            p[0] *= 2.0;
            p[1] *= 2.0;
        }
        let a = cameron_martin_entropy(&lp, 2, 0.2).unwrap();
        let b = cameron_martin_entropy(&doubled, 2, 0.2).unwrap();
        assert!((b.half_action - 4.0 * a.half_action).abs() < 1e-14);
        assert!((b.exact_entropy - 4.0 * a.exact_entropy).abs() < 1e-10 * b.exact_entropy);
        assert!(cameron_martin_entropy(&[[0.1, 0.0], [0.0, 0.0]], 1, 0.1).is_err());
    }

    #[test]
    fn wrapped_density_normalizes() {
        // N = 2: integrate the single interior density over the circle
        let nu = 0.3;
        let v = crate::quadrature::integrate(|u| log_wrapped_bridge_density(nu, &[u]).exp(), 0.0, 1.0, 200);
        assert!((v - 1.0).abs() < 1e-10);
    }

    #[test]
    fn bridge_entropy_constant_and_geodesic() {
        let grid = TorusGrid::line(64).unwrap();
        let constant = DiscretePath::line(&[0.4; 9]).unwrap();
        let r = torus_bridge_entropy_check(&constant, 0.05, 50_000, 1, &grid).unwrap();
        assert!(r.estimate >= -3.0 * r.ci && r.holds(), "{r:?}");
        assert!((r.bound - r.c_emp * 0.05).abs() < 1e-15);
        let geo: Vec<f64> = (0..=8).map(|k| 0.3 * k as f64 / 8.0).collect();
        let r = torus_bridge_entropy_check(&DiscretePath::line(&geo).unwrap(), 0.05, 50_000, 2, &grid).unwrap();
        assert!(r.holds(), "{r:?}");
    }

    #[test]
    fn recovery_flow_properties() {
        let a = DiscretePath::line(&[0.1, 0.2, 0.3, 0.4]).unwrap();
        let b = DiscretePath::line(&[0.8, 0.7, 0.7, 0.6]).unwrap();
        let input = vec![(0.25, a.clone()), (0.75, b.clone())];
        let out = build_recovery_flow(&input, 0.01, 400, 9).unwrap();
        assert_eq!(out.len(), 400);
        assert!((out.iter().map(|p| p.0).sum::<f64>() - 1.0).abs() < 1e-12);
        // endpoint pairs keep their weights exactly
        let wa: f64 = out.iter().filter(|p| p.1.start() == a.start() && p.1.end() == a.end()).map(|p| p.0).sum();
        assert!((wa - 0.25).abs() < 1e-12);
        assert_eq!(out, build_recovery_flow(&input, 0.01, 400, 9).unwrap());
        let tiny = build_recovery_flow(&input, 1e-6, 200, 1).unwrap();
        for (_, p) in &tiny {
            let parent = if p.start() == a.start() { &a } else { &b };
            let far = (0..=3).any(|k| geodesic_dist_sq(p.point(k), parent.point(k)).sqrt() > 5e-3);
            assert!(!far);
        }
    }

    #[test]
    fn recovery_keeps_incompressibility() {
        // stay-put paths from 16 evenly spaced starts: uniform marginals
        let input: Vec<(f64, DiscretePath)> = (0..16)
            .map(|i| (1.0 / 16.0, DiscretePath::line(&[(i as f64 + 0.5) / 16.0; 5]).unwrap()))
            .collect();
        let out = build_recovery_flow(&input, 0.05, 32_000, 4).unwrap();
        let mut counts = [0usize; 16];
        for (_, p) in &out {
            counts[(p.point(2)[0] * 16.0) as usize] += 1;
        }
        assert!(chi_square(&counts, &[1.0 / 16.0; 16]) < CHI2_15_999);
    }
}
