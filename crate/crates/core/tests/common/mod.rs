#![allow(dead_code)]

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use robdiag::design::feasible_basis;
use robdiag::lti::{assemble_dae, build_stacked};
use robdiag::{AttackChannel, AttackModel, AttackSignal, AttackTopology, ModelConfig, StackedSystem};

pub fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

pub fn tie12() -> AttackTopology {
    AttackTopology {
        channels: vec![AttackChannel { area: 1, signal: AttackSignal::TieFlow { to: 2 }, ace_gain: None }],
    }
}

pub fn five_ties() -> AttackTopology {
    let ch = |area, to| AttackChannel { area, signal: AttackSignal::TieFlow { to }, ace_gain: None };
    AttackTopology {
        channels: vec![ch(1, 2), ch(2, 1), ch(2, 3), ch(3, 1), ch(3, 2)],
    }
}

/// Three basis attacks, `1ᵀα ≤ 1.5`.
pub fn three_basis_attack() -> AttackModel {
    AttackModel::Multivariate {
        basis: vec![
            vec![0.1, 0.0, 0.1, 0.0, 0.0],
            vec![0.1, 0.15, 0.25, 0.0, 0.0],
            vec![0.0, 0.0, 0.0, 0.1, 0.1],
        ],
        a: vec![vec![1.0, 1.0, 1.0]],
        b: vec![1.5],
    }
}

pub fn stacked(topo: &AttackTopology, degree: usize) -> StackedSystem {
    let sys = ModelConfig::three_area_default().assemble(topo).unwrap();
    let disc = sys.model.zoh_discretize(0.5).unwrap();
    build_stacked(&assemble_dae(&disc).unwrap(), degree)
}

pub fn zero_q(s: &StackedSystem) -> DMatrix<f64> {
    DMatrix::zeros(s.n_coeffs(), s.n_coeffs())
}

/// A feasible `N̄` (`N̄H̄ = 0`) from coordinates `z` in the left null space.
pub fn feasible_nbar(s: &StackedSystem, z: &[f64]) -> Vec<f64> {
    let v = feasible_basis(&s.bar_h);
    let z = DVector::from_fn(v.ncols(), |i, _| z[i % z.len()]);
    (v * z).iter().copied().collect()
}

/// Roots-of-a expansion independent of the library: `(q - p)^d / (1 - p)^d`.
pub fn denominator(p: f64, d: usize) -> Vec<f64> {
    let mut c = vec![1.0];
    for _ in 0..d {
        let mut next = vec![0.0; c.len() + 1];
        for (i, &ci) in c.iter().enumerate() {
            next[i] -= p * ci;
            next[i + 1] += ci;
        }
        c = next;
    }
    let s = (1.0 - p).powi(d as i32);
    c.iter().map(|v| v / s).collect()
}

/// Direct residual of `a(q)⁻¹ N(q) M y` for `M` = `L` (outputs) or `F`
/// (attacks), `y` one column per sample. The recursion starts once `d+1`
/// samples are available; earlier residuals are zero.
pub fn direct_residual(nbar: &[f64], m: &DMatrix<f64>, a: &[f64], y: &DMatrix<f64>) -> Vec<f64> {
    let d = a.len() - 1;
    let n_r = m.nrows();
    let t = y.ncols();
    let w: Vec<DVector<f64>> = (0..=d)
        .map(|i| m.tr_mul(&DVector::from_column_slice(&nbar[i * n_r..(i + 1) * n_r])))
        .collect();
    let mut r = vec![0.0; t];
    for k in d..t {
        let mut acc: f64 = (0..=d).map(|i| w[i].dot(&y.column(k - d + i))).sum();
        for i in 0..d {
            acc -= a[i] * r[k - d + i];
        }
        r[k] = acc / a[d];
    }
    r
}

pub fn energy(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}
