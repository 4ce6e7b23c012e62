//! Robust residual-filter synthesis.
//!
//! A filter is a row polynomial `N(q) = Σ N_i qⁱ` over the DAE residual
//! space, stored as the stacked row `N̄ = [N_0 … N_{d_N}]`, together with the
//! denominator `a(q) = (q - p)^{d_N} / (1 - p)^{d_N}`. The residual is
//! `r = a(q)⁻¹ N(q) L y`; model-consistency `N̄H̄ = 0` removes the state and
//! disturbance contributions.

pub mod mismatch;
mod synth;

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lti::StackedSystem;
use crate::solver::{solve_lp, LpProblem, SolveStatus};

pub use mismatch::{
    average_q, gram_matrix, impulse_response, mismatch_signature, q_matrices, q_matrix, quad_form, regressor_stack,
    worst_case, MismatchData,
};
pub use synth::{
    design_multivariate, design_univariate, feasible_basis, pretrain_multivariate, steady_state_margin,
    steady_state_residual, worst_case_alpha, BranchOutcome, MultivariateBranch, PretrainReport,
};

/// Feasibility tolerance on every designed constraint.
pub const DESIGN_TOL: f64 = 1e-7;
/// Relative Tikhonov term added to the normalized `Q̄`.
pub const REGULARIZATION: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignMode {
    /// `Q_i ≡ 0`: robust to the abstract model only.
    PureModel,
    DataAssisted,
}

/// Admissible attack set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttackModel {
    Univariate {
        f_min: f64,
        f_max: f64,
    },
    /// `f = F_b α` with `α ∈ {α : Aα ≥ b}`; `basis` lists the columns of
    /// `F_b`, `a` the rows of `A`.
    Multivariate {
        basis: Vec<Vec<f64>>,
        a: Vec<Vec<f64>>,
        b: Vec<f64>,
    },
}

impl AttackModel {
    pub fn validate(&self, n_f: usize) -> Result<()> {
        match self {
            AttackModel::Univariate { f_min, f_max } => {
                if *f_min == 0.0 || *f_max == 0.0 || !(f_min <= f_max) {
                    return Err(Error::InvalidInput(format!(
                        "univariate bounds must be nonzero and ordered, got [{f_min}, {f_max}]"
                    )));
                }
                if n_f != 1 {
                    return Err(Error::InvalidInput(format!("univariate attack needs one channel, model has {n_f}")));
                }
            }
            AttackModel::Multivariate { basis, a, b } => {
                let d = basis.len();
                if d == 0 || basis.iter().any(|f| f.len() != n_f) {
                    return Err(Error::Dimension(format!("attack basis must hold vectors of length {n_f}")));
                }
                if a.len() != b.len() || a.iter().any(|row| row.len() != d) {
                    return Err(Error::Dimension(format!("polytope rows must have length {d}, one offset each")));
                }
                let lp = LpProblem {
                    c: DVector::zeros(d),
                    a_eq: DMatrix::zeros(0, d),
                    b_eq: DVector::zeros(0),
                    a_in: self.polytope_a(),
                    b_in: DVector::from_column_slice(b),
                };
                if solve_lp(&lp)?.status == SolveStatus::Infeasible {
                    return Err(Error::InvalidInput("attack polytope is empty".into()));
                }
            }
        }
        Ok(())
    }

    /// `F_b` as an `n_f × d` matrix.
    pub fn basis_matrix(&self) -> DMatrix<f64> {
        match self {
            AttackModel::Univariate { .. } => DMatrix::from_element(1, 1, 1.0),
            AttackModel::Multivariate { basis, .. } => {
                let n_f = basis.first().map_or(0, Vec::len);
                DMatrix::from_fn(n_f, basis.len(), |i, j| basis[j][i])
            }
        }
    }

    pub fn polytope_a(&self) -> DMatrix<f64> {
        match self {
            AttackModel::Univariate { .. } => DMatrix::zeros(0, 1),
            AttackModel::Multivariate { basis, a, .. } => DMatrix::from_fn(a.len(), basis.len(), |i, j| a[i][j]),
        }
    }

    pub fn polytope_b(&self) -> DVector<f64> {
        match self {
            AttackModel::Univariate { .. } => DVector::zeros(0),
            AttackModel::Multivariate { b, .. } => DVector::from_column_slice(b),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Branch {
    /// Univariate: coefficient block `0..=d_N`. Multivariate: program index
    /// `1..=2d_N+2`.
    pub j: usize,
    pub sign: i8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    Univariate,
    Multivariate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignOptions {
    pub degree: usize,
    pub pole: f64,
    #[serde(default)]
    pub track_steady_state: bool,
    pub mode: DesignMode,
    /// Skip the negative-sign branches when the feasible set is symmetric.
    #[serde(default = "yes")]
    pub symmetric_shortcut: bool,
    #[serde(default = "default_gamma_iterations")]
    pub gamma_iterations: usize,
    #[serde(default = "default_gamma_tol")]
    pub gamma_tol: f64,
}

fn yes() -> bool {
    true
}

fn default_gamma_iterations() -> usize {
    40
}

fn default_gamma_tol() -> f64 {
    DESIGN_TOL
}

impl DesignOptions {
    pub fn new(degree: usize, pole: f64, mode: DesignMode) -> Self {
        DesignOptions {
            degree,
            pole,
            track_steady_state: false,
            mode,
            symmetric_shortcut: true,
            gamma_iterations: default_gamma_iterations(),
            gamma_tol: default_gamma_tol(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pole.abs() < 1.0) {
            return Err(Error::InvalidInput(format!("pole {} must lie in (-1, 1)", self.pole)));
        }
        if self.gamma_iterations == 0 || !(self.gamma_tol > 0.0) {
            return Err(Error::InvalidInput("gamma tuning needs iterations > 0 and tol > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterDesign {
    pub kind: FilterKind,
    pub mode: DesignMode,
    pub degree: usize,
    pub pole: f64,
    /// `a(q)` coefficients, lowest power first.
    pub a_coeffs: Vec<f64>,
    pub n_r: usize,
    /// `[N_0 … N_{d_N}]`, each block of width `n_r`.
    pub nbar: Vec<f64>,
    /// `N̄ Q̄ N̄ᵀ` on the training average (0 in pure-model mode).
    pub objective: f64,
    pub branch: Branch,
    pub track_steady_state: bool,
    /// Multivariate only: tuned level `γ_j` and the multipliers `λ`.
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub lambda: Vec<f64>,
}

impl FilterDesign {
    pub fn block(&self, i: usize) -> &[f64] {
        &self.nbar[i * self.n_r..(i + 1) * self.n_r]
    }

    /// `N(1) = Σ N_i`.
    pub fn n_at_one(&self) -> DVector<f64> {
        let mut s = DVector::zeros(self.n_r);
        for i in 0..=self.degree {
            s += DVector::from_column_slice(self.block(i));
        }
        s
    }

    pub fn a_at_one(&self) -> f64 {
        self.a_coeffs.iter().sum()
    }

    /// `N̄F̄` as a `(d_N+1)·n_f` row.
    pub fn nbar_fbar(&self, stacked: &StackedSystem) -> DVector<f64> {
        stacked.bar_f.tr_mul(&DVector::from_column_slice(&self.nbar))
    }

    /// Checks every structural constraint against the given model.
    pub fn verify(&self, stacked: &StackedSystem, attack: &AttackModel) -> Result<()> {
        let fail = |what: String| Err(Error::Artifact(what));
        if self.degree != stacked.degree || self.n_r != stacked.dae.dims.n_r || self.nbar.len() != stacked.n_coeffs() {
            return fail("filter dimensions do not match the model".into());
        }
        if !(self.pole.abs() < 1.0) {
            return fail(format!("unstable pole {}", self.pole));
        }
        let expect = crate::lti::denominator_coeffs(self.pole, self.degree);
        if expect.iter().zip(&self.a_coeffs).any(|(x, y)| (x - y).abs() > 1e-12 * (1.0 + x.abs())) {
            return fail("a(q) coefficients inconsistent with the pole".into());
        }
        let nbar = DVector::from_column_slice(&self.nbar);
        let nh = stacked.bar_h.tr_mul(&nbar).amax();
        if nh > DESIGN_TOL {
            return fail(format!("N̄H̄ = {nh:.3e} exceeds tolerance"));
        }
        let nf = self.nbar_fbar(stacked);
        if self.track_steady_state {
            let gain = -(stacked.dae.f.tr_mul(&self.n_at_one())).sum() / self.a_at_one();
            if (gain - 1.0).abs() > DESIGN_TOL {
                return fail(format!("steady-state gain {gain} is not 1"));
            }
        }
        match (self.kind, attack) {
            (FilterKind::Univariate, AttackModel::Univariate { .. }) => {
                if nf.amax() < 1.0 - DESIGN_TOL {
                    return fail(format!("‖N̄F̄‖∞ = {} < 1", nf.amax()));
                }
            }
            (FilterKind::Multivariate, AttackModel::Multivariate { .. }) => {
                let gamma = self.gamma.ok_or_else(|| Error::Artifact("missing γ".into()))?;
                let lambda = DVector::from_column_slice(&self.lambda);
                let a = attack.polytope_a();
                if lambda.len() != a.nrows() || lambda.iter().any(|&l| l < -DESIGN_TOL) {
                    return fail("multipliers λ invalid".into());
                }
                if attack.polytope_b().dot(&lambda) < gamma - DESIGN_TOL {
                    return fail("bᵀλ below γ".into());
                }
                let coupling = synth::coupling_row(self, stacked, attack, self.branch) - a.tr_mul(&lambda);
                if coupling.amax() > DESIGN_TOL {
                    return fail(format!("coupling constraint violated by {:.3e}", coupling.amax()));
                }
                if nbar.amax() > 1.0 + DESIGN_TOL {
                    return fail(format!("‖N̄‖∞ = {} exceeds 1", nbar.amax()));
                }
            }
            _ => return fail("filter kind does not match the attack model".into()),
        }
        Ok(())
    }
}

/// Serialized filter, bound to the model it was designed against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterArtifact {
    pub format: u32,
    pub model_hash: String,
    pub attack: AttackModel,
    pub design: FilterDesign,
}

impl FilterArtifact {
    pub const FORMAT: u32 = 1;

    pub fn new(model_hash: String, attack: AttackModel, design: FilterDesign) -> Self {
        FilterArtifact {
            format: Self::FORMAT,
            model_hash,
            attack,
            design,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("serializable");
        s.push('\n');
        s
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    /// Loads, then checks the model hash and every filter invariant.
    pub fn load(path: impl AsRef<Path>, expected_hash: &str, stacked: &StackedSystem) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, expected_hash, stacked)
    }

    pub fn from_json(text: &str, expected_hash: &str, stacked: &StackedSystem) -> Result<Self> {
        let art: FilterArtifact = serde_json::from_str(text).map_err(|e| Error::Artifact(e.to_string()))?;
        if art.format != Self::FORMAT {
            return Err(Error::Artifact(format!("unsupported artifact format {}", art.format)));
        }
        if art.model_hash != expected_hash {
            return Err(Error::HashMismatch {
                expected: art.model_hash,
                found: expected_hash.to_string(),
            });
        }
        art.design.verify(stacked, &art.attack)?;
        Ok(art)
    }
}
