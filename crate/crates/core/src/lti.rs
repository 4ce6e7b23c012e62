//! Linear-systems substrate: polynomial matrices in the forward shift
//! operator `q`, zero-order-hold discretization, and the difference-algebraic
//! (DAE) form used by every synthesis program.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Matrix polynomial `M(q) = Σ_i M_i q^i` with dense coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyMatrix {
    coeffs: Vec<DMatrix<f64>>,
}

impl PolyMatrix {
    pub fn new(coeffs: Vec<DMatrix<f64>>) -> Result<Self> {
        let first = coeffs
            .first()
            .ok_or_else(|| Error::InvalidInput("polynomial matrix needs at least one coefficient".into()))?;
        let shape = first.shape();
        if let Some(bad) = coeffs.iter().position(|m| m.shape() != shape) {
            return Err(Error::Dimension(format!(
                "coefficient {bad} has shape {:?}, expected {shape:?}",
                coeffs[bad].shape()
            )));
        }
        Ok(Self { coeffs })
    }

    /// Scalar polynomial from its coefficients, lowest power first.
    pub fn scalar(coeffs: &[f64]) -> Result<Self> {
        Self::new(coeffs.iter().map(|&c| DMatrix::from_element(1, 1, c)).collect())
    }

    pub fn deg(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn shape(&self) -> (usize, usize) {
        self.coeffs[0].shape()
    }

    pub fn coeffs(&self) -> &[DMatrix<f64>] {
        &self.coeffs
    }

    /// Evaluates `M(q₀)` by Horner's rule.
    pub fn eval(&self, q0: f64) -> DMatrix<f64> {
        let mut acc = self.coeffs[self.deg()].clone();
        for m in self.coeffs.iter().rev().skip(1) {
            acc = acc * q0 + m;
        }
        acc
    }

    /// `M(1) = Σ_i M_i`.
    pub fn eval_at_one(&self) -> DMatrix<f64> {
        let (r, c) = self.shape();
        self.coeffs.iter().fold(DMatrix::zeros(r, c), |acc, m| acc + m)
    }

    /// Polynomial product `self(q) · rhs(q)`.
    pub fn mul(&self, rhs: &PolyMatrix) -> Result<PolyMatrix> {
        let (r, k) = self.shape();
        let (k2, c) = rhs.shape();
        if k != k2 {
            return Err(Error::Dimension(format!("cannot multiply {r}x{k} by {k2}x{c}")));
        }
        let mut out = vec![DMatrix::zeros(r, c); self.deg() + rhs.deg() + 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            for (j, b) in rhs.coeffs.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        PolyMatrix::new(out)
    }
}

/// Coefficients of `a(q) = (q - p)^d / (1 - p)^d`, lowest power first.
///
/// The normalisation makes `a(1) = 1`, so steady-state residual gains are
/// read off `N(1)F` directly.
pub fn denominator_coeffs(pole: f64, degree: usize) -> Vec<f64> {
    let mut c = vec![1.0];
    for _ in 0..degree {
        let mut next = vec![0.0; c.len() + 1];
        for (i, &v) in c.iter().enumerate() {
            next[i + 1] += v;
            next[i] -= pole * v;
        }
        c = next;
    }
    let scale = (1.0 - pole).powi(degree as i32);
    c.iter().map(|v| v / scale).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TimeDomain {
    Continuous,
    Discrete { ts: f64 },
}

/// State-space model `(A, B_d, B_f, C, D_f)`:
///
/// ```text
/// x⁺ = A x + B_d d + B_f f
/// y  = C x + D_f f
/// ```
///
/// where `x⁺` is `ẋ` in continuous time and `x[k+1]` in discrete time.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub a: DMatrix<f64>,
    pub b_d: DMatrix<f64>,
    pub b_f: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d_f: DMatrix<f64>,
    pub domain: TimeDomain,
}

impl LinearModel {
    pub fn new(
        a: DMatrix<f64>,
        b_d: DMatrix<f64>,
        b_f: DMatrix<f64>,
        c: DMatrix<f64>,
        d_f: DMatrix<f64>,
        domain: TimeDomain,
    ) -> Result<Self> {
        let n = a.nrows();
        let check = |what: &str, ok: bool, got: (usize, usize)| {
            if ok {
                Ok(())
            } else {
                Err(Error::Dimension(format!("{what} has shape {got:?} (n_x = {n})")))
            }
        };
        check("A", a.is_square(), a.shape())?;
        check("B_d", b_d.nrows() == n, b_d.shape())?;
        check("B_f", b_f.nrows() == n, b_f.shape())?;
        check("C", c.ncols() == n, c.shape())?;
        check(
            "D_f",
            d_f.nrows() == c.nrows() && d_f.ncols() == b_f.ncols(),
            d_f.shape(),
        )?;
        if let TimeDomain::Discrete { ts } = domain {
            if !(ts > 0.0 && ts.is_finite()) {
                return Err(Error::InvalidInput(format!("sampling time must be positive, got {ts}")));
            }
        }
        Ok(Self { a, b_d, b_f, c, d_f, domain })
    }

    pub fn n_x(&self) -> usize {
        self.a.nrows()
    }
    pub fn n_d(&self) -> usize {
        self.b_d.ncols()
    }
    pub fn n_f(&self) -> usize {
        self.b_f.ncols()
    }
    pub fn n_y(&self) -> usize {
        self.c.nrows()
    }

    pub fn sampling_time(&self) -> Option<f64> {
        match self.domain {
            TimeDomain::Discrete { ts } => Some(ts),
            TimeDomain::Continuous => None,
        }
    }

    /// Zero-order-hold discretization through the exponential of the
    /// augmented matrix `[[A_c, B_c], [0, 0]]·T_s`.
    pub fn zoh_discretize(&self, ts: f64) -> Result<LinearModel> {
        if self.domain != TimeDomain::Continuous {
            return Err(Error::InvalidInput("model is already discrete".into()));
        }
        if !(ts > 0.0 && ts.is_finite()) {
            return Err(Error::InvalidInput(format!("sampling time must be positive, got {ts}")));
        }
        if self.a.iter().chain(self.b_d.iter()).chain(self.b_f.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite entries in continuous model".into()));
        }
        let (n, nd, nf) = (self.n_x(), self.n_d(), self.n_f());
        let m = n + nd + nf;
        let mut aug = DMatrix::zeros(m, m);
        aug.view_mut((0, 0), (n, n)).copy_from(&self.a);
        aug.view_mut((0, n), (n, nd)).copy_from(&self.b_d);
        aug.view_mut((0, n + nd), (n, nf)).copy_from(&self.b_f);
        let e = (aug * ts).exp();
        if e.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("matrix exponential did not converge".into()));
        }
        LinearModel::new(
            e.view((0, 0), (n, n)).into_owned(),
            e.view((0, n), (n, nd)).into_owned(),
            e.view((0, n + nd), (n, nf)).into_owned(),
            self.c.clone(),
            self.d_f.clone(),
            TimeDomain::Discrete { ts },
        )
    }

    /// Spectral radius (discrete) or spectral abscissa (continuous).
    /// Spectral abscissa (continuous) or radius (discrete) of `A` restricted
    /// to the subspace that the inputs can excite from `x = 0`. Linear
    /// functionals `w` with `wᵀ(A - λ₀I) = 0` and `wᵀ[B_d B_f] = 0` are
    /// conserved at zero and are factored out first; in the AGC model these
    /// are the sums of opposite tie flows.
    pub fn stability_margin(&self) -> f64 {
        let a = self.restricted_a();
        let eig = a.complex_eigenvalues();
        match self.domain {
            TimeDomain::Continuous => eig.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max),
            TimeDomain::Discrete { .. } => eig.iter().map(|z| z.norm()).fold(0.0, f64::max),
        }
    }

    fn restricted_a(&self) -> DMatrix<f64> {
        let n = self.n_x();
        let shift = match self.domain {
            TimeDomain::Continuous => 0.0,
            TimeDomain::Discrete { .. } => 1.0,
        };
        let mut m = DMatrix::zeros(n, n + self.n_d() + self.n_f());
        m.view_mut((0, 0), (n, n)).copy_from(&(&self.a - DMatrix::identity(n, n) * shift));
        m.view_mut((0, n), (n, self.n_d())).copy_from(&self.b_d);
        m.view_mut((0, n + self.n_d()), (n, self.n_f())).copy_from(&self.b_f);
        // left null space of m = right null space of mᵀ
        let svd = m.transpose().svd(false, true);
        let v_t = svd.v_t.expect("requested");
        let scale = svd.singular_values.amax().max(1.0);
        let keep: Vec<usize> = (0..svd.singular_values.len())
            .filter(|&k| svd.singular_values[k] > 1e-10 * scale)
            .collect();
        if keep.len() >= n {
            return self.a.clone();
        }
        let mut basis = DMatrix::zeros(n, keep.len());
        for (j, &k) in keep.iter().enumerate() {
            basis.set_column(j, &v_t.row(k).transpose());
        }
        // basis spans range(m), the invariant excited subspace; orthonormalise
        let q = basis.qr().q();
        q.tr_mul(&(&self.a * &q))
    }

    pub fn is_stable(&self) -> bool {
        match self.domain {
            TimeDomain::Continuous => self.stability_margin() < 0.0,
            TimeDomain::Discrete { .. } => self.stability_margin() < 1.0,
        }
    }

    /// Drops attack channels, keeping only the listed columns of `B_f`, `D_f`.
    pub fn select_attacks(&self, keep: &[usize]) -> Result<LinearModel> {
        if let Some(&bad) = keep.iter().find(|&&k| k >= self.n_f()) {
            return Err(Error::InvalidInput(format!("attack channel {bad} out of range")));
        }
        LinearModel::new(
            self.a.clone(),
            self.b_d.clone(),
            self.b_f.select_columns(keep),
            self.c.clone(),
            self.d_f.select_columns(keep),
            self.domain,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DaeDims {
    pub n_r: usize,
    pub n_x: usize,
    pub n_d: usize,
    pub n_y: usize,
    pub n_f: usize,
}

impl DaeDims {
    /// Width of the augmented vector `x̄ = [x; d]`.
    pub fn n_xbar(&self) -> usize {
        self.n_x + self.n_d
    }
}

/// `H(q) = H0 + q·H1`, `L`, `F` of the difference-algebraic form
/// `H(q)x̄ + L y + F f = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct DaeSystem {
    pub h0: DMatrix<f64>,
    pub h1: DMatrix<f64>,
    pub l: DMatrix<f64>,
    pub f: DMatrix<f64>,
    pub dims: DaeDims,
}

impl DaeSystem {
    pub fn h_poly(&self) -> PolyMatrix {
        PolyMatrix::new(vec![self.h0.clone(), self.h1.clone()]).expect("H0 and H1 share a shape")
    }
}

/// Builds `H(q) = [-qI + A, B_d; C, 0]`, `L = [0; -I]`, `F = [B_f; D_f]`.
pub fn assemble_dae(model: &LinearModel) -> Result<DaeSystem> {
    if model.sampling_time().is_none() {
        return Err(Error::InvalidInput("DAE assembly needs a discrete model".into()));
    }
    let (n_x, n_d, n_y, n_f) = (model.n_x(), model.n_d(), model.n_y(), model.n_f());
    let n_r = n_x + n_y;
    let n_xbar = n_x + n_d;

    let mut h0 = DMatrix::zeros(n_r, n_xbar);
    h0.view_mut((0, 0), (n_x, n_x)).copy_from(&model.a);
    h0.view_mut((0, n_x), (n_x, n_d)).copy_from(&model.b_d);
    h0.view_mut((n_x, 0), (n_y, n_x)).copy_from(&model.c);

    let mut h1 = DMatrix::zeros(n_r, n_xbar);
    for i in 0..n_x {
        h1[(i, i)] = -1.0;
    }

    let mut l = DMatrix::zeros(n_r, n_y);
    for i in 0..n_y {
        l[(n_x + i, i)] = -1.0;
    }

    let mut f = DMatrix::zeros(n_r, n_f);
    f.view_mut((0, 0), (n_x, n_f)).copy_from(&model.b_f);
    f.view_mut((n_x, 0), (n_y, n_f)).copy_from(&model.d_f);

    Ok(DaeSystem {
        h0,
        h1,
        l,
        f,
        dims: DaeDims { n_r, n_x, n_d, n_y, n_f },
    })
}

/// Block matrices `H̄`, `L̄`, `F̄` for a filter of degree `d_N`.
///
/// `H̄` is banded: row block `i` holds `H0` at block column `i` and `H1` at
/// block column `i + 1`. `L̄` and `F̄` replicate `L` and `F` on the diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedSystem {
    pub bar_h: DMatrix<f64>,
    pub bar_l: DMatrix<f64>,
    pub bar_f: DMatrix<f64>,
    pub degree: usize,
    pub dae: DaeSystem,
}

impl StackedSystem {
    /// Number of entries in `N̄ = [N_0, …, N_{d_N}]`.
    pub fn n_coeffs(&self) -> usize {
        (self.degree + 1) * self.dae.dims.n_r
    }

    /// Splits a row vector `N̄` into its `d_N + 1` blocks of width `n_r`.
    pub fn split<'a>(&self, nbar: &'a [f64]) -> Vec<&'a [f64]> {
        nbar.chunks(self.dae.dims.n_r).collect()
    }

    /// `N(q)` as a polynomial row vector.
    pub fn n_poly(&self, nbar: &[f64]) -> PolyMatrix {
        let n_r = self.dae.dims.n_r;
        PolyMatrix::new(
            nbar.chunks(n_r)
                .map(|c| DMatrix::from_row_slice(1, n_r, c))
                .collect(),
        )
        .expect("equal-width blocks")
    }
}

pub fn build_stacked(dae: &DaeSystem, degree: usize) -> StackedSystem {
    let DaeDims { n_r, n_y, n_f, .. } = dae.dims;
    let n_xbar = dae.dims.n_xbar();
    let blocks = degree + 1;

    let mut bar_h = DMatrix::zeros(blocks * n_r, (blocks + 1) * n_xbar);
    let mut bar_l = DMatrix::zeros(blocks * n_r, blocks * n_y);
    let mut bar_f = DMatrix::zeros(blocks * n_r, blocks * n_f);
    for i in 0..blocks {
        bar_h.view_mut((i * n_r, i * n_xbar), (n_r, n_xbar)).copy_from(&dae.h0);
        bar_h.view_mut((i * n_r, (i + 1) * n_xbar), (n_r, n_xbar)).copy_from(&dae.h1);
        bar_l.view_mut((i * n_r, i * n_y), (n_r, n_y)).copy_from(&dae.l);
        bar_f.view_mut((i * n_r, i * n_f), (n_r, n_f)).copy_from(&dae.f);
    }
    StackedSystem {
        bar_h,
        bar_l,
        bar_f,
        degree,
        dae: dae.clone(),
    }
}

/// Column left-shift on a horizon of `t` samples with zero fill:
/// `(E·D)[:, k] = E[:, k+1]` and the last column becomes zero.
pub fn shift_matrix(t: usize) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(t, t);
    for k in 0..t.saturating_sub(1) {
        d[(k + 1, k)] = 1.0;
    }
    d
}
