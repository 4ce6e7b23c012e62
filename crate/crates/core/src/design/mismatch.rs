//! Mismatch signatures and the quadratic form that turns mismatch-induced
//! residual energy into `N̄ Q N̄ᵀ`.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lti::{shift_matrix, StackedSystem};
use crate::plant::SampledTrajectory;

/// Per-instance training data.
#[derive(Debug, Clone)]
pub struct MismatchData {
    /// `ε[k] = y_p[k] - y[k]`, one column per sample.
    pub e: DMatrix<f64>,
    /// Blocks `ℰ·Dʲ` for `j = 0..=d_N`, stacked vertically.
    pub d_stack: DMatrix<f64>,
    pub q: DMatrix<f64>,
}

pub fn mismatch_signature(y_p: &SampledTrajectory, y: &SampledTrajectory) -> Result<DMatrix<f64>> {
    if (y_p.meta.ts - y.meta.ts).abs() > 1e-12 * y.meta.ts {
        return Err(Error::InvalidInput(format!(
            "sampling times differ: {} vs {}",
            y_p.meta.ts, y.meta.ts
        )));
    }
    if y_p.y.shape() != y.y.shape() {
        return Err(Error::Dimension(format!(
            "trajectories are misaligned: {:?} vs {:?}",
            y_p.y.shape(),
            y.y.shape()
        )));
    }
    Ok(&y_p.y - &y.y)
}

/// Impulse response of `1/a(q)` over `t` samples, `a` lowest power first.
pub fn impulse_response(a: &[f64], t: usize) -> Result<Vec<f64>> {
    let d = a.len().checked_sub(1).ok_or_else(|| Error::InvalidInput("empty denominator".into()))?;
    let lead = a[d];
    if lead == 0.0 || !lead.is_finite() {
        return Err(Error::InvalidInput("denominator has a zero leading coefficient".into()));
    }
    // a(q) h = δ  ⇒  h[m] = (δ[m-d] - Σ_{i<d} a_i h[m-d+i]) / a_d
    let mut h = vec![0.0; t];
    for m in d..t {
        let mut acc = if m == d { 1.0 } else { 0.0 };
        for i in 0..d {
            acc -= a[i] * h[m - d + i];
        }
        h[m] = acc / lead;
    }
    Ok(h)
}

fn check_stable_denominator(a: &[f64], pole: f64) -> Result<()> {
    if !(pole.abs() < 1.0) {
        return Err(Error::InvalidInput(format!("a(q) pole {pole} is not stable")));
    }
    if a.is_empty() {
        return Err(Error::InvalidInput("empty denominator".into()));
    }
    Ok(())
}

/// `G(i,j) = Σ_k h[k-i] h[k-j]` over the horizon.
pub fn gram_matrix(a: &[f64], pole: f64, t: usize) -> Result<DMatrix<f64>> {
    check_stable_denominator(a, pole)?;
    let h = impulse_response(a, t)?;
    let mut g = DMatrix::zeros(t, t);
    for i in 0..t {
        for j in i..t {
            let s: f64 = (j..t).map(|k| h[k - i] * h[k - j]).sum();
            g[(i, j)] = s;
            g[(j, i)] = s;
        }
    }
    Ok(g)
}

pub fn regressor_stack(e: &DMatrix<f64>, degree: usize) -> DMatrix<f64> {
    let (n_y, t) = e.shape();
    let shift = shift_matrix(t);
    let mut out = DMatrix::zeros((degree + 1) * n_y, t);
    let mut block = e.clone();
    for j in 0..=degree {
        out.view_mut((j * n_y, 0), (n_y, t)).copy_from(&block);
        block = &block * &shift;
    }
    out
}

/// `Q = (L̄ D_i) G (L̄ D_i)ᵀ`, symmetrized.
pub fn q_matrix(stacked: &StackedSystem, e: &DMatrix<f64>, g: &DMatrix<f64>) -> Result<MismatchData> {
    let n_y = stacked.dae.dims.n_y;
    if e.nrows() != n_y || g.shape() != (e.ncols(), e.ncols()) {
        return Err(Error::Dimension(format!(
            "signature {:?} and Gram {:?} do not fit n_y = {n_y}",
            e.shape(),
            g.shape()
        )));
    }
    let d_stack = regressor_stack(e, stacked.degree);
    let m = &stacked.bar_l * &d_stack;
    let q = &m * g * m.transpose();
    let q = (&q + q.transpose()) * 0.5;
    Ok(MismatchData {
        e: e.clone(),
        d_stack,
        q,
    })
}

/// Builds one [`MismatchData`] per signature in parallel; order is kept.
pub fn q_matrices(stacked: &StackedSystem, signatures: &[DMatrix<f64>], g: &DMatrix<f64>) -> Result<Vec<MismatchData>> {
    signatures.par_iter().map(|e| q_matrix(stacked, e, g)).collect()
}

pub fn average_q(qs: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
    let first = qs.first().ok_or_else(|| Error::InvalidInput("no training instances".into()))?;
    let mut acc = DMatrix::zeros(first.nrows(), first.ncols());
    for q in qs {
        if q.shape() != first.shape() {
            return Err(Error::Dimension("Q matrices differ in shape".into()));
        }
        acc += q;
    }
    Ok(acc / qs.len() as f64)
}

pub fn quad_form(q: &DMatrix<f64>, nbar: &[f64]) -> f64 {
    let n = nbar.len();
    let mut s = 0.0;
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..n {
            row += q[(i, j)] * nbar[j];
        }
        s += nbar[i] * row;
    }
    s
}

/// Evaluation-only: `max_i N̄ Q_i N̄ᵀ`.
pub fn worst_case(qs: &[DMatrix<f64>], nbar: &[f64]) -> Result<f64> {
    if qs.is_empty() {
        return Err(Error::InvalidInput("no training instances".into()));
    }
    Ok(qs.iter().map(|q| quad_form(q, nbar)).fold(f64::NEG_INFINITY, f64::max))
}
