//! Dense two-phase simplex for small equality-form linear programs
//! `min c.x  s.t.  A x = b, x >= 0`.
//!
//! Pivoting uses Dantzig's rule and falls back to Bland's rule after a run of
//! degenerate pivots, so transportation problems (highly degenerate) always
//! terminate. Column and row order fully determine the returned vertex.

use super::{OtError, Result};

const PIVOT_TOL: f64 = 1e-12;
const DEGENERATE_RUN: usize = 32;

#[derive(Debug, Clone)]
pub(crate) struct LinearProgram {
    n_vars: usize,
    objective: Vec<f64>,
    rows: Vec<(Vec<(usize, f64)>, f64)>,
}

#[derive(Debug, Clone)]
pub(crate) struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
}

impl LinearProgram {
    pub fn new(objective: Vec<f64>) -> Self {
        Self { n_vars: objective.len(), objective, rows: Vec::new() }
    }

    /// Adds `sum coeff * x[var] = rhs`.
    pub fn add_equality(&mut self, coeffs: Vec<(usize, f64)>, rhs: f64) {
        self.rows.push((coeffs, rhs));
    }

    pub fn solve(&self) -> Result<LpSolution> {
        let m = self.rows.len();
        let n = self.n_vars;
        let width = n + m + 1;
        let rhs_col = width - 1;
        let mut t = Tableau { m, width, cells: vec![0.0; m * width], z: vec![0.0; width], basis: vec![0; m] };

        for (r, (coeffs, rhs)) in self.rows.iter().enumerate() {
            let sign = if *rhs < 0.0 { -1.0 } else { 1.0 };
            for &(var, coeff) in coeffs {
                t.cells[r * width + var] += sign * coeff;
            }
            t.cells[r * width + n + r] = 1.0;
            t.cells[r * width + rhs_col] = sign * rhs;
            t.basis[r] = n + r;
        }

        // Phase 1: minimize the sum of artificials.
        for r in 0..m {
            for j in 0..width {
                if j < n || j == rhs_col {
                    t.z[j] -= t.cells[r * width + j];
                }
            }
        }
        let scale_b = self.rows.iter().map(|(_, b)| b.abs()).fold(1.0, f64::max);
        t.run(n + m, 1e-11 * scale_b)?;
        let infeasibility = -t.z[rhs_col];
        if infeasibility > 1e-9 * scale_b {
            return Err(OtError::Lp(format!("infeasible (phase-one residual {infeasibility:e})")));
        }

        // Drive zero-level artificials out of the basis where possible.
        for r in 0..m {
            if t.basis[r] >= n {
                if let Some(j) = (0..n).find(|&j| t.cells[r * width + j].abs() > 1e-9) {
                    t.pivot(r, j);
                }
            }
        }

        // Phase 2 reduced costs.
        let scale_c = self.objective.iter().map(|c| c.abs()).fold(1.0, f64::max);
        t.z.iter_mut().for_each(|v| *v = 0.0);
        t.z[..n].copy_from_slice(&self.objective);
        for r in 0..m {
            let var = t.basis[r];
            let cb = if var < n { self.objective[var] } else { 0.0 };
            if cb != 0.0 {
                for j in 0..width {
                    t.z[j] -= cb * t.cells[r * width + j];
                }
            }
        }
        t.run(n, 1e-11 * scale_c)?;

        let mut x = vec![0.0; n];
        for r in 0..m {
            if t.basis[r] < n {
                x[t.basis[r]] = t.cells[r * width + rhs_col].max(0.0);
            }
        }
        let objective = self.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
        Ok(LpSolution { x, objective })
    }
}

struct Tableau {
    m: usize,
    width: usize,
    cells: Vec<f64>,
    z: Vec<f64>,
    basis: Vec<usize>,
}

impl Tableau {
    /// Iterates until no column below `allowed` has negative reduced cost.
    fn run(&mut self, allowed: usize, tol: f64) -> Result<()> {
        let rhs_col = self.width - 1;
        let mut degenerate = 0usize;
        let mut bland = false;
        let max_pivots = 50 * (self.width + self.m) + 1000;
        for _ in 0..max_pivots {
            let entering = if bland {
                (0..allowed).find(|&j| self.z[j] < -tol)
            } else {
                let mut best: Option<usize> = None;
                for j in 0..allowed {
                    if self.z[j] < -tol && best.map_or(true, |b| self.z[j] < self.z[b]) {
                        best = Some(j);
                    }
                }
                best
            };
            let Some(col) = entering else { return Ok(()) };

            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.m {
                let a = self.cells[r * self.width + col];
                if a > PIVOT_TOL {
                    let ratio = self.cells[r * self.width + rhs_col].max(0.0) / a;
                    let better = match leave {
                        None => true,
                        Some((lr, lratio)) => {
                            ratio < lratio - 1e-15 || (ratio <= lratio + 1e-15 && self.basis[r] < self.basis[lr])
                        }
                    };
                    if better {
                        leave = Some((r, ratio));
                    }
                }
            }
            let Some((row, ratio)) = leave else {
                return Err(OtError::Lp("unbounded".into()));
            };
            if ratio <= 1e-15 {
                degenerate += 1;
                if degenerate >= DEGENERATE_RUN {
                    bland = true;
                }
            } else {
                degenerate = 0;
            }
            self.pivot(row, col);
        }
        Err(OtError::Lp("pivot limit reached".into()))
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let w = self.width;
        let p = self.cells[row * w + col];
        for j in 0..w {
            self.cells[row * w + j] /= p;
        }
        self.cells[row * w + col] = 1.0;
        let pivot_row: Vec<f64> = self.cells[row * w..(row + 1) * w].to_vec();
        for r in 0..self.m {
            if r == row {
                continue;
            }
            let f = self.cells[r * w + col];
            if f != 0.0 {
                let dst = &mut self.cells[r * w..(r + 1) * w];
                for (d, s) in dst.iter_mut().zip(&pivot_row) {
                    *d -= f * s;
                }
                dst[col] = 0.0;
            }
        }
        let f = self.z[col];
        if f != 0.0 {
            for (d, s) in self.z.iter_mut().zip(&pivot_row) {
                *d -= f * s;
            }
            self.z[col] = 0.0;
        }
        self.basis[row] = col;
    }
}
