//! Dense revised simplex for small standard-form linear programs
//! `min cᵀx  s.t.  Ax = b, x ≥ 0`.
//!
//! Two phases with artificial variables, explicit basis inverse updated by
//! elementary row operations, Bland's rule for both the entering and the
//! leaving variable (so ties are deterministic and cycling cannot occur).
//! Redundant equality rows are detected after phase I and left with their
//! artificial variable pinned at zero.

use crate::{Error, Result};

const PIVOT_TOL: f64 = 1e-11;
const COST_TOL: f64 = 1e-11;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Clone, Debug)]
pub struct LpSolution {
    pub status: LpStatus,
    pub objective: f64,
    pub x: Vec<f64>,
    pub iterations: usize,
}

struct Tableau<'a> {
    a: &'a [f64],
    rows: usize,
    cols: usize,
    /// Basis inverse, row-major `rows × rows`.
    binv: Vec<f64>,
    /// Basic variable per row; indices `>= cols` are artificials.
    basis: Vec<usize>,
    xb: Vec<f64>,
    iterations: usize,
}

impl<'a> Tableau<'a> {
    fn column(&self, j: usize) -> Vec<f64> {
        let r = self.rows;
        if j >= self.cols {
            let k = j - self.cols;
            return (0..r).map(|i| self.binv[i * r + k]).collect();
        }
        let mut out = vec![0.0; r];
        for k in 0..r {
            let akj = self.a[k * self.cols + j];
            if akj != 0.0 {
                for (i, o) in out.iter_mut().enumerate() {
                    *o += self.binv[i * r + k] * akj;
                }
            }
        }
        out
    }

    fn pivot(&mut self, row: usize, entering: usize, d: &[f64]) {
        let r = self.rows;
        let piv = d[row];
        for k in 0..r {
            self.binv[row * r + k] /= piv;
        }
        self.xb[row] /= piv;
        for i in 0..r {
            if i == row || d[i] == 0.0 {
                continue;
            }
            let f = d[i];
            for k in 0..r {
                self.binv[i * r + k] -= f * self.binv[row * r + k];
            }
            self.xb[i] -= f * self.xb[row];
            if self.xb[i].abs() < 1e-15 {
                self.xb[i] = 0.0;
            }
        }
        self.basis[row] = entering;
        self.iterations += 1;
    }

    /// Runs simplex iterations for cost vector `cost` over variables
    /// `0..n_vars` (artificials beyond `cols` only if `n_vars > cols`).
    fn optimize(&mut self, cost: &[f64], n_vars: usize, max_iter: usize) -> Result<LpStatus> {
        let r = self.rows;
        loop {
            if self.iterations > max_iter {
                return Err(Error::NoConvergence {
                    iterations: self.iterations,
                    residual: f64::NAN,
                    history: Vec::new(),
                });
            }
            // duals y = c_Bᵀ B⁻¹
            let mut y = vec![0.0; r];
            for (i, &bv) in self.basis.iter().enumerate() {
                let cb = cost[bv];
                if cb != 0.0 {
                    for k in 0..r {
                        y[k] += cb * self.binv[i * r + k];
                    }
                }
            }
            let mut in_basis = vec![false; n_vars.max(self.cols + r)];
            for &bv in &self.basis {
                in_basis[bv] = true;
            }
            // Bland: smallest index with negative reduced cost
            let mut entering = None;
            for j in 0..n_vars {
                if in_basis[j] {
                    continue;
                }
                let mut rc = cost[j];
                if j < self.cols {
                    for k in 0..r {
                        rc -= y[k] * self.a[k * self.cols + j];
                    }
                } else {
                    rc -= y[j - self.cols];
                }
                if rc < -COST_TOL {
                    entering = Some(j);
                    break;
                }
            }
            let Some(j) = entering else {
                return Ok(LpStatus::Optimal);
            };
            let d = self.column(j);
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..r {
                if d[i] > PIVOT_TOL {
                    let ratio = self.xb[i] / d[i];
                    match leave {
                        None => leave = Some((i, ratio)),
                        Some((li, lr)) => {
                            if ratio < lr - 1e-14
                                || (ratio <= lr + 1e-14 && self.basis[i] < self.basis[li])
                            {
                                leave = Some((i, ratio));
                            }
                        }
                    }
                }
            }
            let Some((row, _)) = leave else {
                return Ok(LpStatus::Unbounded);
            };
            self.pivot(row, j, &d);
        }
    }
}

/// Solves `min cᵀx, Ax = b, x ≥ 0` with `a` given row-major (`rows × cols`).
pub fn solve_standard_form(a: &[f64], b: &[f64], c: &[f64], rows: usize, cols: usize) -> Result<LpSolution> {
    if a.len() != rows * cols || b.len() != rows || c.len() != cols {
        return Err(Error::GridMismatch("linear program shapes disagree".into()));
    }
    // flip rows so that b ≥ 0
    let mut a_owned = a.to_vec();
    let mut b_owned = b.to_vec();
    for i in 0..rows {
        if b_owned[i] < 0.0 {
            b_owned[i] = -b_owned[i];
            for v in &mut a_owned[i * cols..(i + 1) * cols] {
                *v = -*v;
            }
        }
    }
    let mut binv = vec![0.0; rows * rows];
    for i in 0..rows {
        binv[i * rows + i] = 1.0;
    }
    let mut t = Tableau {
        a: &a_owned,
        rows,
        cols,
        binv,
        basis: (cols..cols + rows).collect(),
        xb: b_owned.clone(),
        iterations: 0,
    };
    let max_iter = 50 * (rows + cols) + 10_000;

    // phase I
    let mut cost1 = vec![0.0; cols + rows];
    cost1[cols..].iter_mut().for_each(|v| *v = 1.0);
    t.optimize(&cost1, cols + rows, max_iter)?;
    let infeas: f64 = t
        .basis
        .iter()
        .zip(&t.xb)
        .filter(|(bv, _)| **bv >= cols)
        .map(|(_, x)| *x)
        .sum();
    let scale = b_owned.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
    if infeas > 1e-9 * scale {
        return Ok(LpSolution {
            status: LpStatus::Infeasible,
            objective: f64::NAN,
            x: Vec::new(),
            iterations: t.iterations,
        });
    }
    // drive artificials out where possible; rows where no original column
    // can enter are redundant and keep a zero artificial
    for row in 0..rows {
        if t.basis[row] < cols {
            continue;
        }
        let r = rows;
        let mut in_basis = vec![false; cols];
        for &bv in &t.basis {
            if bv < cols {
                in_basis[bv] = true;
            }
        }
        let binv_row: Vec<f64> = t.binv[row * r..(row + 1) * r].to_vec();
        let entering = (0..cols).find(|&j| {
            if in_basis[j] {
                return false;
            }
            let v: f64 = (0..r).map(|k| binv_row[k] * a_owned[k * cols + j]).sum();
            v.abs() > 1e-9
        });
        if let Some(j) = entering {
            let d = t.column(j);
            t.pivot(row, j, &d);
        }
    }

    // phase II over original variables only
    let mut cost2 = vec![0.0; cols + rows];
    cost2[..cols].copy_from_slice(c);
    let status = t.optimize(&cost2, cols, max_iter)?;
    let mut x = vec![0.0; cols];
    for (bv, &xv) in t.basis.iter().zip(&t.xb) {
        if *bv < cols {
            x[*bv] = xv.max(0.0);
        }
    }
    let objective = if status == LpStatus::Optimal {
        x.iter().zip(c).map(|(a, b)| a * b).sum()
    } else {
        f64::NEG_INFINITY
    };
    Ok(LpSolution {
        status,
        objective,
        x,
        iterations: t.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_textbook_problem() {
        // min -x0 - 2x1  s.t. x0 + x1 + s0 = 4, x0 + 3x1 + s1 = 6
        let a = [1.0, 1.0, 1.0, 0.0, 1.0, 3.0, 0.0, 1.0];
        let b = [4.0, 6.0];
        let c = [-1.0, -2.0, 0.0, 0.0];
        let sol = solve_standard_form(&a, &b, &c, 2, 4).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.objective + 5.0).abs() < 1e-12);
        assert!((sol.x[0] - 3.0).abs() < 1e-12 && (sol.x[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn detects_infeasible_and_unbounded() {
        let a = [1.0, 1.0];
        let sol = solve_standard_form(&a, &[-1.0], &[1.0, 1.0], 1, 2).unwrap();
        assert_eq!(sol.status, LpStatus::Infeasible);
        let a = [1.0, -1.0];
        let sol = solve_standard_form(&a, &[1.0], &[0.0, -1.0], 1, 2).unwrap();
        assert_eq!(sol.status, LpStatus::Unbounded);
    }

    #[test]
    fn redundant_rows_are_tolerated() {
        // 2x2 transportation problem: one of the four equality rows is redundant
        let a = [
            1.0, 1.0, 0.0, 0.0, //
            0.0, 0.0, 1.0, 1.0, //
            1.0, 0.0, 1.0, 0.0, //
            0.0, 1.0, 0.0, 1.0,
        ];
        let b = [0.5, 0.5, 0.5, 0.5];
        let c = [0.0, 1.0, 1.0, 0.0];
        let sol = solve_standard_form(&a, &b, &c, 4, 4).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!(sol.objective.abs() < 1e-14);
        let c = [1.0, 0.0, 0.0, 1.0];
        let sol = solve_standard_form(&a, &b, &c, 4, 4).unwrap();
        assert!(sol.objective.abs() < 1e-14);
        assert!((sol.x[1] - 0.5).abs() < 1e-14);
    }
}
