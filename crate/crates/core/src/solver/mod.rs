//! Dense solvers for the problem classes emitted by filter synthesis.
//!
//! Conventions, shared by LPs and QPs:
//!
//! ```text
//! minimize    xᵀ P x + cᵀ x
//! subject to  A_eq x  = b_eq
//!             A_in x >= b_in
//! ```
//!
//! `x` is free. Note the missing `½`: the objective is exactly the
//! quadratic form the synthesis programs minimise. Every optimal exit carries
//! a KKT certificate (see [`Residuals`]); an infeasible or unbounded problem
//! gets a verdict, never a timeout.

mod lp;
mod qp;

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub use lp::solve_lp;
pub use qp::solve_qp;

/// Primal feasibility required on optimal exits.
pub const FEAS_TOL: f64 = 1e-7;
/// Stationarity and complementarity required on optimal exits.
pub const KKT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    /// Iteration limit or numerical breakdown.
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Residuals {
    /// `max(‖A_eq x - b_eq‖∞, max(b_in - A_in x, 0))`.
    pub primal: f64,
    /// `‖2Px + c - A_eqᵀy - A_inᵀz‖∞`.
    pub stationarity: f64,
    /// `max |z_i (A_in x - b_in)_i|`.
    pub complementarity: f64,
    /// `max(-z, 0)`.
    pub dual: f64,
}

impl Residuals {
    pub fn certified(&self) -> bool {
        self.primal <= FEAS_TOL
            && self.stationarity <= KKT_TOL
            && self.complementarity <= KKT_TOL
            && self.dual <= KKT_TOL
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub x: DVector<f64>,
    pub objective: f64,
    pub status: SolveStatus,
    /// Multipliers of the equality block.
    pub dual_eq: DVector<f64>,
    /// Multipliers of the inequality block (non-negative at optimum).
    pub dual_in: DVector<f64>,
    pub iterations: usize,
    pub residuals: Residuals,
}

impl Solution {
    pub(crate) fn verdict(status: SolveStatus, n: usize, m_eq: usize, m_in: usize, iterations: usize) -> Self {
        Solution {
            x: DVector::zeros(n),
            objective: match status {
                SolveStatus::Infeasible => f64::INFINITY,
                SolveStatus::Unbounded => f64::NEG_INFINITY,
                _ => f64::NAN,
            },
            status,
            dual_eq: DVector::zeros(m_eq),
            dual_in: DVector::zeros(m_in),
            iterations,
            residuals: Residuals::default(),
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

#[derive(Debug, Clone)]
pub struct QpProblem {
    pub p: DMatrix<f64>,
    pub c: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub a_in: DMatrix<f64>,
    pub b_in: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct LpProblem {
    pub c: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub a_in: DMatrix<f64>,
    pub b_in: DVector<f64>,
}

impl LpProblem {
    pub fn n(&self) -> usize {
        self.c.len()
    }

    pub fn validate(&self) -> Result<()> {
        check_blocks(self.n(), &self.a_eq, &self.b_eq, &self.a_in, &self.b_in)
    }

    pub fn as_qp(&self) -> QpProblem {
        QpProblem {
            p: DMatrix::zeros(self.n(), self.n()),
            c: self.c.clone(),
            a_eq: self.a_eq.clone(),
            b_eq: self.b_eq.clone(),
            a_in: self.a_in.clone(),
            b_in: self.b_in.clone(),
        }
    }
}

impl QpProblem {
    pub fn n(&self) -> usize {
        self.c.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if self.p.shape() != (n, n) {
            return Err(Error::Dimension(format!("P is {:?}, expected {n}x{n}", self.p.shape())));
        }
        let asym = (&self.p - self.p.transpose()).amax();
        if asym > 1e-12 * (1.0 + self.p.amax()) {
            return Err(Error::InvalidInput(format!("P is not symmetric (max asymmetry {asym:.2e})")));
        }
        check_blocks(n, &self.a_eq, &self.b_eq, &self.a_in, &self.b_in)
    }

    pub fn as_lp(&self) -> LpProblem {
        LpProblem {
            c: self.c.clone(),
            a_eq: self.a_eq.clone(),
            b_eq: self.b_eq.clone(),
            a_in: self.a_in.clone(),
            b_in: self.b_in.clone(),
        }
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        x.dot(&(&self.p * x)) + self.c.dot(x)
    }

    /// KKT residuals of a primal/dual pair.
    pub fn residuals(&self, x: &DVector<f64>, y: &DVector<f64>, z: &DVector<f64>) -> Residuals {
        let eq = &self.a_eq * x - &self.b_eq;
        let slack = &self.a_in * x - &self.b_in;
        let primal = eq.amax().max(slack.iter().fold(0.0f64, |m, &s| m.max(-s)));
        let grad = (&self.p * x) * 2.0 + &self.c - self.a_eq.tr_mul(y) - self.a_in.tr_mul(z);
        let complementarity = z.iter().zip(slack.iter()).fold(0.0f64, |m, (zi, si)| m.max((zi * si).abs()));
        let dual = z.iter().fold(0.0f64, |m, &zi| m.max(-zi));
        Residuals {
            primal,
            stationarity: grad.amax(),
            complementarity,
            dual,
        }
    }

    /// Text dump for offline cross-checking: a `qp n m_eq m_in` line, then
    /// each block as `name rows cols` followed by row-major lines.
    pub fn dump(&self) -> String {
        let mut s = format!("qp {} {} {}\n", self.n(), self.a_eq.nrows(), self.a_in.nrows());
        dump_block(&mut s, "P", &self.p);
        dump_block(&mut s, "c", &DMatrix::from_column_slice(self.n(), 1, self.c.as_slice()));
        dump_block(&mut s, "A_eq", &self.a_eq);
        dump_block(&mut s, "b_eq", &DMatrix::from_column_slice(self.b_eq.len(), 1, self.b_eq.as_slice()));
        dump_block(&mut s, "A_in", &self.a_in);
        dump_block(&mut s, "b_in", &DMatrix::from_column_slice(self.b_in.len(), 1, self.b_in.as_slice()));
        s
    }
}

fn dump_block(s: &mut String, name: &str, m: &DMatrix<f64>) {
    let _ = writeln!(s, "{name} {} {}", m.nrows(), m.ncols());
    for r in 0..m.nrows() {
        let row: Vec<String> = m.row(r).iter().map(|v| format!("{v:e}")).collect();
        let _ = writeln!(s, "{}", row.join(" "));
    }
}

fn check_blocks(
    n: usize,
    a_eq: &DMatrix<f64>,
    b_eq: &DVector<f64>,
    a_in: &DMatrix<f64>,
    b_in: &DVector<f64>,
) -> Result<()> {
    if a_eq.ncols() != n || a_eq.nrows() != b_eq.len() {
        return Err(Error::Dimension(format!(
            "equality block is {:?} with {} right-hand sides (n = {n})",
            a_eq.shape(),
            b_eq.len()
        )));
    }
    if a_in.ncols() != n || a_in.nrows() != b_in.len() {
        return Err(Error::Dimension(format!(
            "inequality block is {:?} with {} right-hand sides (n = {n})",
            a_in.shape(),
            b_in.len()
        )));
    }
    let finite = a_eq.iter().chain(b_eq.iter()).chain(a_in.iter()).chain(b_in.iter()).all(|v| v.is_finite());
    if !finite {
        return Err(Error::InvalidInput("non-finite constraint data".into()));
    }
    Ok(())
}
