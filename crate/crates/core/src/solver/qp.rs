//! Primal active-set method for convex (PSD) quadratic programs.
//!
//! A feasible start comes from the simplex phase one. Each iteration works
//! in the null space `Z` of the working constraints: the reduced Hessian is
//! eigen-decomposed, so semidefinite curvature is handled explicitly.
//! Directions of zero curvature with a non-zero reduced gradient are
//! followed as rays (and yield an `Unbounded` verdict when nothing blocks
//! them), the rest take a Newton step.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::lp::solve_lp;
use super::{LpProblem, QpProblem, Solution, SolveStatus};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Row {
    Eq(usize),
    In(usize),
}

struct WorkingSet<'a> {
    prob: &'a QpProblem,
    rows: Vec<Row>,
    basis: Vec<DVector<f64>>,
}

impl<'a> WorkingSet<'a> {
    fn row(&self, r: Row) -> DVector<f64> {
        match r {
            Row::Eq(i) => self.prob.a_eq.row(i).transpose(),
            Row::In(i) => self.prob.a_in.row(i).transpose(),
        }
    }

    fn try_add(&mut self, r: Row) -> bool {
        let a = self.row(r);
        let norm = a.norm();
        if norm == 0.0 {
            return false;
        }
        let mut v = a.clone();
        for _ in 0..2 {
            for q in &self.basis {
                let proj = q.dot(&v);
                v.axpy(-proj, q, 1.0);
            }
        }
        let rn = v.norm();
        if rn <= 1e-10 * norm {
            return false;
        }
        self.basis.push(v / rn);
        self.rows.push(r);
        true
    }

    fn remove(&mut self, r: Row) {
        let rows: Vec<Row> = self.rows.iter().copied().filter(|&x| x != r).collect();
        self.rows.clear();
        self.basis.clear();
        for x in rows {
            self.try_add(x);
        }
    }

    fn contains(&self, r: Row) -> bool {
        self.rows.contains(&r)
    }

    /// Orthonormal basis of the null space of the working rows.
    fn null_space(&self, n: usize) -> DMatrix<f64> {
        let w = self.basis.len();
        if w == 0 {
            return DMatrix::identity(n, n);
        }
        if w >= n {
            return DMatrix::zeros(n, 0);
        }
        let mut aug = DMatrix::zeros(n, w + n);
        for (j, q) in self.basis.iter().enumerate() {
            aug.set_column(j, q);
        }
        for i in 0..n {
            aug[(i, w + i)] = 1.0;
        }
        let q = aug.qr().q();
        q.columns(w, n - w).into_owned()
    }

    /// Least-squares multipliers `μ` with `A_Wᵀ μ ≈ g`.
    fn multipliers(&self, g: &DVector<f64>) -> Vec<f64> {
        let w = self.rows.len();
        if w == 0 {
            return Vec::new();
        }
        let n = g.len();
        let mut at = DMatrix::zeros(n, w);
        for (j, &r) in self.rows.iter().enumerate() {
            at.set_column(j, &self.row(r));
        }
        let svd = at.svd(true, true);
        match svd.solve(g, 1e-14) {
            Ok(mu) => mu.iter().copied().collect(),
            Err(_) => vec![0.0; w],
        }
    }
}

pub fn solve_qp(prob: &QpProblem) -> Result<Solution> {
    prob.validate()?;
    let n = prob.n();
    let (me, mi) = (prob.a_eq.nrows(), prob.a_in.nrows());

    let phase_one = solve_lp(&LpProblem {
        c: DVector::zeros(n),
        ..prob.as_lp()
    })?;
    match phase_one.status {
        SolveStatus::Optimal => {}
        SolveStatus::Infeasible => return Ok(Solution::verdict(SolveStatus::Infeasible, n, me, mi, phase_one.iterations)),
        _ => return Ok(Solution::verdict(SolveStatus::Failed, n, me, mi, phase_one.iterations)),
    }
    let mut x = phase_one.x;
    let mut iterations = phase_one.iterations;

    let mut ws = WorkingSet {
        prob,
        rows: Vec::new(),
        basis: Vec::new(),
    };
    for i in 0..me {
        ws.try_add(Row::Eq(i));
    }
    let b_scale = 1.0 + prob.b_in.amax();
    for i in 0..mi {
        let slack = prob.a_in.row(i).dot(&x.transpose()) - prob.b_in[i];
        if slack.abs() <= 1e-9 * b_scale {
            ws.try_add(Row::In(i));
        }
    }

    let hess = &prob.p * 2.0;
    let max_iter = 10 * (n + me + mi) + 200;
    let mut local = 0;
    loop {
        local += 1;
        iterations += 1;
        if local > max_iter {
            return Ok(Solution::verdict(SolveStatus::Failed, n, me, mi, iterations));
        }
        let g = &hess * &x + &prob.c;
        let g_scale = 1.0 + g.amax();
        let z = ws.null_space(n);
        let k = z.ncols();

        let mut step: Option<(DVector<f64>, bool)> = None;
        if k > 0 {
            let m = z.tr_mul(&(&hess * &z));
            let m = (&m + m.transpose()) * 0.5;
            let eig = SymmetricEigen::new(m);
            let rg = z.tr_mul(&g);
            let beta = eig.eigenvectors.tr_mul(&rg);
            let lam_max = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let zero_tol = 1e-13 * lam_max;
            let g_tol = 1e-11 * g_scale;

            let mut ray = DVector::zeros(k);
            let mut newton = DVector::zeros(k);
            let mut decrease = 0.0;
            let mut has_ray = false;
            for i in 0..k {
                let lam = eig.eigenvalues[i];
                let v = eig.eigenvectors.column(i);
                if lam <= zero_tol {
                    if beta[i].abs() > g_tol {
                        ray.axpy(-beta[i], &v, 1.0);
                        has_ray = true;
                    }
                } else {
                    newton.axpy(-beta[i] / lam, &v, 1.0);
                    decrease += 0.5 * beta[i] * beta[i] / lam;
                }
            }
            let f = prob.objective(&x);
            if has_ray {
                let p = &z * ray;
                let p = &p / p.norm();
                step = Some((p, true));
            } else if decrease > 1e-15 * (1.0 + f.abs()) {
                step = Some((&z * newton, false));
            }
        }

        match step {
            None => {
                let mu = ws.multipliers(&g);
                let mut worst: Option<(usize, f64)> = None;
                for (j, &r) in ws.rows.iter().enumerate() {
                    if let Row::In(_) = r {
                        if mu[j] < -1e-9 * g_scale && worst.is_none_or(|(_, w)| mu[j] < w) {
                            worst = Some((j, mu[j]));
                        }
                    }
                }
                if let Some((j, _)) = worst {
                    let r = ws.rows[j];
                    ws.remove(r);
                    continue;
                }
                let mut dual_eq = DVector::zeros(me);
                let mut dual_in = DVector::zeros(mi);
                for (j, &r) in ws.rows.iter().enumerate() {
                    match r {
                        Row::Eq(i) => dual_eq[i] = mu[j],
                        Row::In(i) => dual_in[i] = mu[j],
                    }
                }
                let residuals = prob.residuals(&x, &dual_eq, &dual_in);
                let status = if residuals.certified() {
                    SolveStatus::Optimal
                } else {
                    SolveStatus::Failed
                };
                return Ok(Solution {
                    objective: prob.objective(&x),
                    x,
                    status,
                    dual_eq,
                    dual_in,
                    iterations,
                    residuals,
                });
            }
            Some((p, is_ray)) => {
                let p_norm = p.norm();
                let mut block: Option<(usize, f64)> = None;
                for i in 0..mi {
                    if ws.contains(Row::In(i)) {
                        let _ = i;
                        continue;
                    }
                    let a = prob.a_in.row(i);
                    let ap = a.dot(&p.transpose());
                    if ap >= -1e-12 * a.norm() * p_norm {
                        continue;
                    }
                    let slack = (a.dot(&x.transpose()) - prob.b_in[i]).max(0.0);
                    let ratio = slack / -ap;
                    if block.is_none_or(|(_, best)| ratio < best) {
                        block = Some((i, ratio));
                    }
                }
                match block {
                    Some((i, ratio)) if is_ray || ratio < 1.0 => {
                        x.axpy(ratio, &p, 1.0);
                        ws.try_add(Row::In(i));
                    }
                    None if is_ray => {
                        return Ok(Solution::verdict(SolveStatus::Unbounded, n, me, mi, iterations));
                    }
                    _ => x += p,
                }
            }
        }
    }
}
