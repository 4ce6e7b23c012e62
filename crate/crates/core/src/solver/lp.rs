//! Two-phase dense tableau simplex.
//!
//! Free variables are split as `x = u - v`, inequalities get surplus
//! columns, and phase one drives a full set of artificials to zero. Pivoting
//! uses Dantzig's rule and falls back to Bland's rule permanently after a run
//! of degenerate pivots, so the method terminates. There is no randomness:
//! identical inputs give bit-identical outputs.

use nalgebra::{DMatrix, DVector};

use super::{LpProblem, Solution, SolveStatus};
use crate::error::Result;

const PIVOT_TOL: f64 = 1e-9;
const COST_TOL: f64 = 1e-10;
const DEGENERATE_RUN: usize = 50;

struct Tableau {
    rows: usize,
    width: usize,
    data: Vec<f64>,
    cost: Vec<f64>,
    basis: Vec<usize>,
    iterations: usize,
}

enum Outcome {
    Optimal,
    Unbounded,
    IterationLimit,
}

impl Tableau {
    fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.width + c]
    }

    fn rhs(&self, r: usize) -> f64 {
        self.data[r * self.width + self.width - 1]
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let w = self.width;
        let inv = 1.0 / self.data[r * w + c];
        for v in &mut self.data[r * w..(r + 1) * w] {
            *v *= inv;
        }
        let pivot_row: Vec<f64> = self.data[r * w..(r + 1) * w].to_vec();
        let nz: Vec<usize> = (0..w).filter(|&j| pivot_row[j] != 0.0).collect();
        for i in 0..self.rows {
            if i == r {
                continue;
            }
            let factor = self.data[i * w + c];
            if factor == 0.0 {
                continue;
            }
            let row = &mut self.data[i * w..(i + 1) * w];
            for &j in &nz {
                row[j] -= factor * pivot_row[j];
            }
            row[c] = 0.0;
        }
        let factor = self.cost[c];
        if factor != 0.0 {
            for &j in &nz {
                self.cost[j] -= factor * pivot_row[j];
            }
            self.cost[c] = 0.0;
        }
        self.basis[r] = c;
        self.iterations += 1;
    }

    /// Runs simplex iterations over the first `allowed` columns.
    fn run(&mut self, allowed: usize, max_iter: usize) -> Outcome {
        let mut bland = false;
        let mut degenerate = 0;
        let scale = 1.0 + self.cost[..allowed].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        loop {
            if self.iterations >= max_iter {
                return Outcome::IterationLimit;
            }
            let tol = COST_TOL * scale;
            let entering = if bland {
                (0..allowed).find(|&j| self.cost[j] < -tol)
            } else {
                let mut best: Option<usize> = None;
                for j in 0..allowed {
                    if self.cost[j] < -tol && best.is_none_or(|b| self.cost[j] < self.cost[b]) {
                        best = Some(j);
                    }
                }
                best
            };
            let Some(c) = entering else {
                return Outcome::Optimal;
            };

            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.rows {
                let a = self.at(i, c);
                if a <= PIVOT_TOL {
                    continue;
                }
                let ratio = self.rhs(i).max(0.0) / a;
                leave = match leave {
                    None => Some((i, ratio)),
                    Some((r, best)) => {
                        let tie = (ratio - best).abs() <= 1e-12 * (1.0 + best.abs());
                        if (tie && self.basis[i] < self.basis[r]) || (!tie && ratio < best) {
                            Some((i, ratio))
                        } else {
                            Some((r, best))
                        }
                    }
                };
            }
            let Some((r, ratio)) = leave else {
                return Outcome::Unbounded;
            };
            if ratio <= 1e-12 {
                degenerate += 1;
                if degenerate >= DEGENERATE_RUN {
                    bland = true;
                }
            } else {
                degenerate = 0;
            }
            self.pivot(r, c);
        }
    }
}

pub fn solve_lp(prob: &LpProblem) -> Result<Solution> {
    prob.validate()?;
    let n = prob.n();
    let (me, mi) = (prob.a_eq.nrows(), prob.a_in.nrows());
    let m = me + mi;
    let n_real = 2 * n + mi;
    let width = n_real + m + 1;
    let max_iter = 50 * (m + n_real) + 1000;

    // standard form rows, sign-flipped so every right-hand side is >= 0
    let mut signs = vec![1.0; m];
    let mut data = vec![0.0; m * width];
    for i in 0..m {
        let (row, rhs) = if i < me {
            (prob.a_eq.row(i), prob.b_eq[i])
        } else {
            (prob.a_in.row(i - me), prob.b_in[i - me])
        };
        let s = if rhs < 0.0 { -1.0 } else { 1.0 };
        signs[i] = s;
        let base = i * width;
        for j in 0..n {
            data[base + j] = s * row[j];
            data[base + n + j] = -s * row[j];
        }
        if i >= me {
            data[base + 2 * n + (i - me)] = -s;
        }
        data[base + n_real + i] = 1.0;
        data[base + width - 1] = s * rhs;
    }

    let mut cost = vec![0.0; width];
    for i in 0..m {
        for j in 0..n_real {
            cost[j] -= data[i * width + j];
        }
        cost[width - 1] -= data[i * width + width - 1];
    }

    let mut t = Tableau {
        rows: m,
        width,
        data,
        cost,
        basis: (n_real..n_real + m).collect(),
        iterations: 0,
    };

    match t.run(n_real, max_iter) {
        Outcome::Optimal => {}
        Outcome::Unbounded | Outcome::IterationLimit => {
            return Ok(Solution::verdict(SolveStatus::Failed, n, me, mi, t.iterations));
        }
    }
    let b_scale = 1.0 + prob.b_eq.amax().max(prob.b_in.amax());
    if -t.cost[width - 1] > 1e-9 * b_scale {
        return Ok(Solution::verdict(SolveStatus::Infeasible, n, me, mi, t.iterations));
    }

    // drive artificials out of the basis; rows where that is impossible are redundant
    let mut redundant = vec![false; m];
    for r in 0..m {
        if t.basis[r] < n_real {
            continue;
        }
        let col = (0..n_real).find(|&j| t.at(r, j).abs() > PIVOT_TOL);
        match col {
            Some(c) => t.pivot(r, c),
            None => redundant[r] = true,
        }
    }

    // phase two cost row
    let mut c_std = vec![0.0; n_real];
    for j in 0..n {
        c_std[j] = prob.c[j];
        c_std[n + j] = -prob.c[j];
    }
    let mut cost = vec![0.0; width];
    cost[..n_real].copy_from_slice(&c_std);
    for r in 0..m {
        let b = t.basis[r];
        let cb = if b < n_real { c_std[b] } else { 0.0 };
        if cb == 0.0 {
            continue;
        }
        for j in 0..width {
            cost[j] -= cb * t.at(r, j);
        }
    }
    t.cost = cost;

    match t.run(n_real, max_iter) {
        Outcome::Optimal => {}
        Outcome::Unbounded => {
            return Ok(Solution::verdict(SolveStatus::Unbounded, n, me, mi, t.iterations));
        }
        Outcome::IterationLimit => {
            return Ok(Solution::verdict(SolveStatus::Failed, n, me, mi, t.iterations));
        }
    }

    // refine the basic solution and duals with a fresh factorisation
    let rows: Vec<usize> = (0..m).filter(|&r| !redundant[r]).collect();
    let k = rows.len();
    let std_col = |i: usize, j: usize| -> f64 {
        let s = signs[i];
        let a = |jj: usize| if i < me { prob.a_eq[(i, jj)] } else { prob.a_in[(i - me, jj)] };
        if j < n {
            s * a(j)
        } else if j < 2 * n {
            -s * a(j - n)
        } else if i >= me && j - 2 * n == i - me {
            -s
        } else {
            0.0
        }
    };
    let std_rhs = |i: usize| signs[i] * if i < me { prob.b_eq[i] } else { prob.b_in[i - me] };
    let basis: Vec<usize> = rows.iter().map(|&r| t.basis[r]).collect();
    let bmat = DMatrix::from_fn(k, k, |i, j| std_col(rows[i], basis[j]));
    let rhs = DVector::from_fn(k, |i, _| std_rhs(rows[i]));
    let cb = DVector::from_fn(k, |j, _| c_std[basis[j]]);
    let solved = if k == 0 {
        (Some(DVector::zeros(0)), Some(DVector::zeros(0)))
    } else {
        (bmat.clone().lu().solve(&rhs), bmat.transpose().lu().solve(&cb))
    };
    let (x_b, y_std) = match solved {
        (Some(xb), Some(y)) => (xb, y),
        _ => {
            // fall back to the tableau values
            let xb = DVector::from_fn(k, |i, _| t.rhs(rows[i]));
            let y = DVector::zeros(k);
            (xb, y)
        }
    };

    let mut x_std = vec![0.0; n_real];
    for (j, &b) in basis.iter().enumerate() {
        x_std[b] = x_b[j];
    }
    let x = DVector::from_fn(n, |j, _| x_std[j] - x_std[n + j]);
    let mut dual_eq = DVector::zeros(me);
    let mut dual_in = DVector::zeros(mi);
    for (idx, &r) in rows.iter().enumerate() {
        let y = signs[r] * y_std[idx];
        if r < me {
            dual_eq[r] = y;
        } else {
            dual_in[r - me] = y;
        }
    }

    let qp = prob.as_qp();
    let residuals = qp.residuals(&x, &dual_eq, &dual_in);
    let objective = prob.c.dot(&x);
    let status = if residuals.certified() {
        SolveStatus::Optimal
    } else {
        SolveStatus::Failed
    };
    Ok(Solution {
        x,
        objective,
        status,
        dual_eq,
        dual_in,
        iterations: t.iterations,
        residuals,
    })
}
