//! Flat torus geometry and its uniform cell-centered grid.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Uniform grid on `T^d` with `m` cells per axis.
///
/// Cell `i` (per axis) has center `(i + 1/2) h`, `h = 1/m`. Multi-indices are
/// flattened row-major: in `d = 2`, cell `(i0, i1)` sits at `i0 * m + i1`, with
/// `i0` indexing axis 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawGrid")]
pub struct TorusGrid {
    d: usize,
    m: usize,
}

#[derive(Deserialize)]
struct RawGrid {
    d: usize,
    m: usize,
}

impl TryFrom<RawGrid> for TorusGrid {
    type Error = Error;

    fn try_from(raw: RawGrid) -> Result<Self> {
        Self::new(raw.d, raw.m)
    }
}

impl TorusGrid {
    pub fn new(d: usize, m: usize) -> Result<Self> {
        if !(1..=2).contains(&d) {
            return Err(Error::UnsupportedDimension(d));
        }
        if m < 2 {
            return Err(Error::Domain(format!("grid needs m >= 2 cells, got {m}")));
        }
        Ok(Self { d, m })
    }

    pub fn line(m: usize) -> Result<Self> {
        Self::new(1, m)
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn cells_per_axis(&self) -> usize {
        self.m
    }

    /// Total number of cells, `m^d`.
    pub fn len(&self) -> usize {
        self.m.pow(self.d as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.m as f64
    }

    /// Cell volume `h^d`; cell volumes sum to one.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.d as i32)
    }

    /// Per-axis indices of a flat cell index.
    pub fn multi_index(&self, flat: usize) -> [usize; 2] {
        match self.d {
            1 => [flat, 0],
            _ => [flat / self.m, flat % self.m],
        }
    }

    pub fn flat_index(&self, idx: [usize; 2]) -> usize {
        match self.d {
            1 => idx[0],
            _ => idx[0] * self.m + idx[1],
        }
    }

    /// Coordinates of the center of a cell (unused trailing axes are zero).
    pub fn center(&self, flat: usize) -> [f64; 2] {
        let h = self.spacing();
        let idx = self.multi_index(flat);
        let mut c = [0.0; 2];
        for a in 0..self.d {
            c[a] = (idx[a] as f64 + 0.5) * h;
        }
        c
    }

    /// Flat index of the neighbour shifted by `offset` cells along `axis`.
    pub fn neighbor(&self, flat: usize, axis: usize, offset: isize) -> usize {
        let mut idx = self.multi_index(flat);
        let m = self.m as isize;
        idx[axis] = (idx[axis] as isize + offset).rem_euclid(m) as usize;
        self.flat_index(idx)
    }

    /// Cell containing a torus point.
    pub fn locate(&self, x: &[f64]) -> usize {
        let mut idx = [0usize; 2];
        for a in 0..self.d {
            let w = x[a].rem_euclid(1.0);
            idx[a] = ((w * self.m as f64).floor() as usize).min(self.m - 1);
        }
        self.flat_index(idx)
    }
}

/// Projects a point of `R^d` onto the canonical representative in `[0,1)^d`.
pub fn wrap(x: &[f64]) -> Result<Vec<f64>> {
    x.iter()
        .map(|&v| {
            if !v.is_finite() {
                return Err(Error::Domain(format!("non-finite coordinate {v}")));
            }
            Ok(wrap_scalar(v))
        })
        .collect()
}

/// `v mod 1` in `[0, 1)`.
#[inline]
pub fn wrap_scalar(v: f64) -> f64 {
    let w = v.rem_euclid(1.0);
    // rem_euclid can round up to exactly 1.0 for tiny negative inputs
    if w >= 1.0 {
        0.0
    } else {
        w
    }
}

/// Signed representative of `v` in `[-1/2, 1/2)`.
#[inline]
pub fn centered(v: f64) -> f64 {
    let w = wrap_scalar(v + 0.5) - 0.5;
    if w >= 0.5 {
        w - 1.0
    } else {
        w
    }
}

/// Per-axis wrap-around distance `min(|Δ|, 1 - |Δ|)`.
#[inline]
pub fn axis_dist(a: f64, b: f64) -> f64 {
    let d = (a - b).abs().rem_euclid(1.0);
    d.min(1.0 - d)
}

/// Geodesic distance on the flat torus.
pub fn geodesic_dist(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    geodesic_dist_sq(x, y).sqrt()
}

pub fn geodesic_dist_sq(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(&a, &b)| axis_dist(a, b).powi(2)).sum()
}
