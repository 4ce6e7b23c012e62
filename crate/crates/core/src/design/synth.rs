//! The convex programs behind filter synthesis.
//!
//! All programs are posed in coordinates `z` of the feasible subspace:
//! `N̄ = (V z)ᵀ` where the columns of `V` are an orthonormal basis of
//! `{w : H̄ᵀw = 0}`. Model consistency then holds to round-off and the
//! programs shrink by the rank of `H̄`. Because `V` is orthonormal,
//! `‖N̄‖₂ = ‖z‖₂` and the Tikhonov term keeps its meaning.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mismatch::quad_form;
use super::{AttackModel, Branch, DesignMode, DesignOptions, FilterDesign, FilterKind, REGULARIZATION};
use crate::error::{Error, Result};
use crate::lti::{denominator_coeffs, StackedSystem};
use crate::solver::{solve_lp, solve_qp, LpProblem, QpProblem, SolveStatus};

/// Orthonormal basis (columns) of the left null space of `bar_h`.
pub fn feasible_basis(bar_h: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, m) = bar_h.shape();
    let mut mt = DMatrix::zeros(m.max(n), n);
    mt.view_mut((0, 0), (m, n)).copy_from(&bar_h.transpose());
    let svd = mt.svd(false, true);
    let v_t = svd.v_t.expect("requested");
    let smax = svd.singular_values.amax();
    let tol = 1e-10 * smax.max(1.0) * n as f64;
    let null: Vec<usize> = (0..n).filter(|&k| svd.singular_values[k] <= tol).collect();
    let mut v = DMatrix::zeros(n, null.len());
    for (j, &k) in null.iter().enumerate() {
        v.set_column(j, &v_t.row(k).transpose());
    }
    v
}

struct Reduced<'a> {
    stacked: &'a StackedSystem,
    v: DMatrix<f64>,
    /// `F̄ᵀ V`: row `i·n_f + c` maps `z` to `N_i F e_c`.
    fv: DMatrix<f64>,
    /// Normalized, regularized `Vᵀ Q̄ V`.
    p: DMatrix<f64>,
}

impl<'a> Reduced<'a> {
    fn new(stacked: &'a StackedSystem, q_bar: &DMatrix<f64>, mode: DesignMode) -> Result<Self> {
        let n = stacked.n_coeffs();
        if q_bar.shape() != (n, n) {
            return Err(Error::Dimension(format!("Q̄ is {:?}, expected {n}x{n}", q_bar.shape())));
        }
        let v = feasible_basis(&stacked.bar_h);
        if v.ncols() == 0 {
            return Err(Error::NoFilter("N̄H̄ = 0 admits only N̄ = 0 at this degree".into()));
        }
        let fv = stacked.bar_f.tr_mul(&v);
        let k = v.ncols();
        let scale = q_bar.amax();
        let mut p = match mode {
            DesignMode::DataAssisted if scale > 0.0 => {
                let r = v.tr_mul(&(q_bar * &v)) / scale;
                (&r + r.transpose()) * 0.5
            }
            _ => DMatrix::zeros(k, k),
        };
        for i in 0..k {
            p[(i, i)] += REGULARIZATION;
        }
        Ok(Reduced { stacked, v, fv, p })
    }

    fn k(&self) -> usize {
        self.v.ncols()
    }

    fn nbar(&self, z: &DVector<f64>) -> Vec<f64> {
        (&self.v * z).iter().copied().collect()
    }

    /// Row mapping `z` to `-Σ_i N_i F` for a single-channel model.
    fn tracking_row(&self) -> DMatrix<f64> {
        let n_f = self.stacked.dae.dims.n_f;
        let mut row = DMatrix::zeros(1, self.k());
        for i in 0..=self.stacked.degree {
            for c in 0..n_f {
                row -= self.fv.row(i * n_f + c);
            }
        }
        row
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BranchOutcome {
    pub branch: Branch,
    pub status: String,
    pub objective: Option<f64>,
}

fn status_name(s: SolveStatus) -> String {
    format!("{s:?}").to_lowercase()
}

/// Minimises `N̄Q̄N̄ᵀ` subject to `N̄H̄ = 0` and `‖N̄F̄‖∞ ≥ 1`, one convex QP per
/// active coordinate and sign, optionally with unit steady-state gain.
pub fn design_univariate(
    stacked: &StackedSystem,
    q_bar: &DMatrix<f64>,
    opts: &DesignOptions,
) -> Result<(FilterDesign, Vec<BranchOutcome>)> {
    opts.validate()?;
    check_degree(stacked, opts)?;
    if stacked.dae.dims.n_f != 1 {
        return Err(Error::InvalidInput(format!(
            "univariate design needs one attack channel, model has {}",
            stacked.dae.dims.n_f
        )));
    }
    let red = Reduced::new(stacked, q_bar, opts.mode)?;
    let a_coeffs = denominator_coeffs(opts.pole, opts.degree);
    let a_one: f64 = a_coeffs.iter().sum();
    let k = red.k();

    let signs: &[i8] = if opts.track_steady_state || !opts.symmetric_shortcut { &[1, -1] } else { &[1] };
    let branches: Vec<Branch> = (0..=opts.degree)
        .flat_map(|j| signs.iter().map(move |&sign| Branch { j, sign }))
        .collect();

    let tracking = red.tracking_row();
    let solved: Vec<Result<(Branch, crate::solver::Solution)>> = branches
        .par_iter()
        .map(|&br| {
            let a_in = red.fv.rows(br.j, 1) * f64::from(br.sign);
            let (a_eq, b_eq) = if opts.track_steady_state {
                (tracking.clone(), DVector::from_element(1, a_one))
            } else {
                (DMatrix::zeros(0, k), DVector::zeros(0))
            };
            let qp = QpProblem {
                p: red.p.clone(),
                c: DVector::zeros(k),
                a_eq,
                b_eq,
                a_in,
                b_in: DVector::from_element(1, 1.0),
            };
            Ok((br, solve_qp(&qp)?))
        })
        .collect();

    let mut outcomes = Vec::with_capacity(branches.len());
    let mut best: Option<(Branch, DVector<f64>, f64)> = None;
    for item in solved {
        let (br, sol) = item?;
        let optimal = sol.is_optimal();
        outcomes.push(BranchOutcome {
            branch: br,
            status: status_name(sol.status),
            objective: optimal.then_some(sol.objective),
        });
        if optimal && best.as_ref().is_none_or(|(_, _, f)| sol.objective < f - 1e-9 * f.abs()) {
            best = Some((br, sol.x, sol.objective));
        }
    }
    let Some((mut branch, z, _)) = best else {
        let detail: Vec<String> = outcomes.iter().map(|o| format!("j={} s={:+}: {}", o.branch.j, o.branch.sign, o.status)).collect();
        return Err(Error::NoFilter(detail.join(", ")));
    };

    let mut nbar = red.nbar(&z);
    if !opts.track_steady_state {
        let nf = stacked.bar_f.tr_mul(&DVector::from_column_slice(&nbar));
        if let Some(first) = nf.iter().find(|v| v.abs() > 1e-12) {
            if *first < 0.0 {
                nbar.iter_mut().for_each(|v| *v = -*v);
                branch.sign = -branch.sign;
            }
        }
    }
    let design = FilterDesign {
        kind: FilterKind::Univariate,
        mode: opts.mode,
        degree: opts.degree,
        pole: opts.pole,
        a_coeffs,
        n_r: stacked.dae.dims.n_r,
        objective: quad_form(q_bar, &nbar),
        nbar,
        branch,
        track_steady_state: opts.track_steady_state,
        gamma: None,
        lambda: Vec::new(),
    };
    Ok((design, outcomes))
}

fn check_degree(stacked: &StackedSystem, opts: &DesignOptions) -> Result<()> {
    if stacked.degree != opts.degree {
        return Err(Error::InvalidInput(format!(
            "stacked system has degree {}, options ask for {}",
            stacked.degree, opts.degree
        )));
    }
    Ok(())
}

/// Program index `j ∈ 1..=2d_N+2` to coefficient block and sign.
fn program_block(j: usize) -> (usize, f64) {
    let idx = (j - 1) / 2;
    let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
    (idx, sign)
}

/// `s · F_bᵀ (N_idx F)ᵀ` as a linear map of `z` (`d × k`).
fn coupling_map(red: &Reduced, attack: &AttackModel, j: usize) -> DMatrix<f64> {
    let n_f = red.stacked.dae.dims.n_f;
    let (idx, sign) = program_block(j);
    let block = red.fv.rows(idx * n_f, n_f);
    attack.basis_matrix().tr_mul(&block) * sign
}

/// `s · (N_idx F F_b)ᵀ` for an existing design.
pub(super) fn coupling_row(
    design: &FilterDesign,
    stacked: &StackedSystem,
    attack: &AttackModel,
    branch: Branch,
) -> DVector<f64> {
    let (idx, sign) = program_block(branch.j);
    let n_idx = DVector::from_column_slice(design.block(idx));
    let nf = stacked.dae.f.tr_mul(&n_idx);
    attack.basis_matrix().tr_mul(&nf) * sign
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MultivariateBranch {
    pub j: usize,
    pub gamma_star: f64,
    pub status: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PretrainReport {
    pub branches: Vec<MultivariateBranch>,
    /// Program index with the largest `γ*_j` (lowest `j` on ties).
    pub best_j: usize,
    pub best_gamma: f64,
}

fn multivariate_attack(attack: &AttackModel, n_f: usize) -> Result<()> {
    match attack {
        AttackModel::Multivariate { .. } => attack.validate(n_f),
        AttackModel::Univariate { .. } => Err(Error::InvalidInput("expected a multivariate attack model".into())),
    }
}

/// Solves `LP_j` for `j = 1..=2d_N+2`: maximise `bᵀλ` subject to
/// `s N_idx F F_b = λᵀA`, `N̄H̄ = 0`, `λ ≥ 0` and `‖N̄‖∞ ≤ 1`.
pub fn pretrain_multivariate(stacked: &StackedSystem, attack: &AttackModel) -> Result<PretrainReport> {
    multivariate_attack(attack, stacked.dae.dims.n_f)?;
    let n = stacked.n_coeffs();
    let red = Reduced::new(stacked, &DMatrix::zeros(n, n), DesignMode::PureModel)?;
    let k = red.k();
    let a = attack.polytope_a();
    let b = attack.polytope_b();
    let (n_b, d) = a.shape();
    let nv = k + n_b;

    let jobs: Vec<usize> = (1..=2 * stacked.degree + 2).collect();
    let solved: Vec<Result<MultivariateBranch>> = jobs
        .par_iter()
        .map(|&j| {
            let mut a_eq = DMatrix::zeros(d, nv);
            a_eq.view_mut((0, 0), (d, k)).copy_from(&coupling_map(&red, attack, j));
            a_eq.view_mut((0, k), (d, n_b)).copy_from(&(-a.transpose()));
            let mut a_in = DMatrix::zeros(n_b + 2 * n, nv);
            for i in 0..n_b {
                a_in[(i, k + i)] = 1.0;
            }
            a_in.view_mut((n_b, 0), (n, k)).copy_from(&red.v);
            a_in.view_mut((n_b + n, 0), (n, k)).copy_from(&(-&red.v));
            let mut c = DVector::zeros(nv);
            c.rows_mut(k, n_b).copy_from(&(-&b));
            let lp = LpProblem {
                c,
                a_eq,
                b_eq: DVector::zeros(d),
                a_in,
                b_in: DVector::from_fn(n_b + 2 * n, |i, _| if i < n_b { 0.0 } else { -1.0 }),
            };
            let sol = solve_lp(&lp)?;
            let gamma_star = match sol.status {
                SolveStatus::Optimal => -sol.objective,
                SolveStatus::Unbounded => f64::INFINITY,
                _ => f64::NAN,
            };
            Ok(MultivariateBranch {
                j,
                gamma_star,
                status: status_name(sol.status),
            })
        })
        .collect();
    let branches = solved.into_iter().collect::<Result<Vec<_>>>()?;
    let mut best: Option<&MultivariateBranch> = None;
    for br in &branches {
        if br.gamma_star > best.map_or(f64::NEG_INFINITY, |b| b.gamma_star) {
            best = Some(br);
        }
    }
    match best {
        Some(br) if br.gamma_star > 1e-9 => Ok(PretrainReport {
            best_j: br.j,
            best_gamma: br.gamma_star,
            branches: branches.clone(),
        }),
        _ => Err(Error::DetectorInfeasible(
            "no detectable attack direction: every γ*_j is non-positive".into(),
        )),
    }
}

/// Solves `QP_j` and tunes `γ_j` by bisection on `(0, γ_max]` to the
/// largest level whose optimal filter still satisfies `‖N̄‖∞ ≤ 1`.
pub fn design_multivariate(
    stacked: &StackedSystem,
    q_bar: &DMatrix<f64>,
    attack: &AttackModel,
    j: usize,
    gamma_max: f64,
    opts: &DesignOptions,
) -> Result<FilterDesign> {
    opts.validate()?;
    check_degree(stacked, opts)?;
    multivariate_attack(attack, stacked.dae.dims.n_f)?;
    if j == 0 || j > 2 * opts.degree + 2 {
        return Err(Error::InvalidInput(format!("program index {j} outside 1..={}", 2 * opts.degree + 2)));
    }
    if !(gamma_max > 0.0 && gamma_max.is_finite()) {
        return Err(Error::InvalidInput(format!("γ upper bound must be positive and finite, got {gamma_max}")));
    }
    let red = Reduced::new(stacked, q_bar, opts.mode)?;
    let k = red.k();
    let a = attack.polytope_a();
    let b = attack.polytope_b();
    let (n_b, d) = a.shape();
    let nv = k + n_b;

    let mut p = DMatrix::zeros(nv, nv);
    p.view_mut((0, 0), (k, k)).copy_from(&red.p);
    for i in 0..n_b {
        p[(k + i, k + i)] = REGULARIZATION;
    }
    let mut a_eq = DMatrix::zeros(d, nv);
    a_eq.view_mut((0, 0), (d, k)).copy_from(&coupling_map(&red, attack, j));
    a_eq.view_mut((0, k), (d, n_b)).copy_from(&(-a.transpose()));
    let mut a_in = DMatrix::zeros(1 + n_b, nv);
    a_in.view_mut((0, k), (1, n_b)).copy_from(&b.transpose());
    for i in 0..n_b {
        a_in[(1 + i, k + i)] = 1.0;
    }

    let solve_at = |gamma: f64| -> Result<Option<(DVector<f64>, Vec<f64>)>> {
        let mut b_in = DVector::zeros(1 + n_b);
        b_in[0] = gamma;
        let qp = QpProblem {
            p: p.clone(),
            c: DVector::zeros(nv),
            a_eq: a_eq.clone(),
            b_eq: DVector::zeros(d),
            a_in: a_in.clone(),
            b_in,
        };
        let sol = solve_qp(&qp)?;
        if !sol.is_optimal() {
            return Ok(None);
        }
        let z = sol.x.rows(0, k).into_owned();
        let nbar = red.nbar(&z);
        let peak = nbar.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if peak > 1.0 + opts.gamma_tol {
            return Ok(None);
        }
        let lambda = sol.x.rows(k, n_b).iter().map(|&l| l.max(0.0)).collect();
        Ok(Some((DVector::from_vec(nbar), lambda)))
    };

    let mut best = solve_at(gamma_max)?.map(|s| (gamma_max, s));
    if best.is_none() {
        let (mut lo, mut hi) = (0.0, gamma_max);
        for _ in 0..opts.gamma_iterations {
            let mid = 0.5 * (lo + hi);
            match solve_at(mid)? {
                Some(s) => {
                    lo = mid;
                    best = Some((mid, s));
                }
                None => hi = mid,
            }
        }
        if best.is_none() {
            return Err(Error::NoFilter(format!(
                "QP_{j} infeasible at every probed γ in (0, {gamma_max}]; frontier below {hi:e}"
            )));
        }
    }
    let (gamma, (nbar, lambda)) = best.expect("checked");
    let nbar: Vec<f64> = nbar.iter().copied().collect();
    let (_, sign) = program_block(j);
    Ok(FilterDesign {
        kind: FilterKind::Multivariate,
        mode: opts.mode,
        degree: opts.degree,
        pole: opts.pole,
        a_coeffs: denominator_coeffs(opts.pole, opts.degree),
        n_r: stacked.dae.dims.n_r,
        objective: quad_form(q_bar, &nbar),
        nbar,
        branch: Branch { j, sign: sign as i8 },
        track_steady_state: false,
        gamma: Some(gamma),
        lambda,
    })
}

/// Inner minimisation `min_{α ∈ 𝒜} cᵀα`, `c = (s N_idx F F_b)ᵀ`.
pub fn worst_case_alpha(design: &FilterDesign, stacked: &StackedSystem, attack: &AttackModel) -> Result<DVector<f64>> {
    multivariate_attack(attack, stacked.dae.dims.n_f)?;
    let c = coupling_row(design, stacked, attack, design.branch);
    let d = c.len();
    let sol = solve_lp(&LpProblem {
        c,
        a_eq: DMatrix::zeros(0, d),
        b_eq: DVector::zeros(0),
        a_in: attack.polytope_a(),
        b_in: attack.polytope_b(),
    })?;
    match sol.status {
        SolveStatus::Optimal => Ok(sol.x),
        SolveStatus::Unbounded => Err(Error::Unbounded("attack set is unbounded along the descent direction".into())),
        SolveStatus::Infeasible => Err(Error::InvalidInput("attack polytope is empty".into())),
        SolveStatus::Failed => Err(Error::Numerical("inner LP did not converge".into())),
    }
}

/// `-a(1)⁻¹ N(1) F f`.
pub fn steady_state_residual(design: &FilterDesign, stacked: &StackedSystem, f: &DVector<f64>) -> f64 {
    let nf = stacked.dae.f.tr_mul(&design.n_at_one());
    -nf.dot(f) / design.a_at_one()
}

/// `min_{α ∈ 𝒜} |steady_state_residual(F_b α)|`, one LP per sign.
pub fn steady_state_margin(design: &FilterDesign, stacked: &StackedSystem, attack: &AttackModel) -> Result<f64> {
    multivariate_attack(attack, stacked.dae.dims.n_f)?;
    let nf = stacked.dae.f.tr_mul(&design.n_at_one());
    let c = attack.basis_matrix().tr_mul(&nf) * (-1.0 / design.a_at_one());
    let d = c.len();
    let a = attack.polytope_a();
    let b = attack.polytope_b();
    let mut best = f64::INFINITY;
    for sign in [1.0, -1.0] {
        let sc = &c * sign;
        let mut a_in = DMatrix::zeros(a.nrows() + 1, d);
        a_in.view_mut((0, 0), a.shape()).copy_from(&a);
        a_in.row_mut(a.nrows()).copy_from(&sc.transpose());
        let mut b_in = DVector::zeros(a.nrows() + 1);
        b_in.rows_mut(0, a.nrows()).copy_from(&b);
        let sol = solve_lp(&LpProblem {
            c: sc,
            a_eq: DMatrix::zeros(0, d),
            b_eq: DVector::zeros(0),
            a_in,
            b_in,
        })?;
        match sol.status {
            SolveStatus::Optimal => best = best.min(sol.objective.max(0.0)),
            SolveStatus::Infeasible => {}
            SolveStatus::Unbounded | SolveStatus::Failed => {
                return Err(Error::Numerical("steady-state margin LP failed".into()));
            }
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agc::{AttackChannel, AttackSignal, AttackTopology, ModelConfig};
    use crate::lti::{assemble_dae, build_stacked};

    fn tie12_stacked(degree: usize) -> StackedSystem {
        let cfg = ModelConfig::three_area_default();
        let topo = AttackTopology {
            channels: vec![AttackChannel { area: 1, signal: AttackSignal::TieFlow { to: 2 }, ace_gain: None }],
        };
        let sys = cfg.assemble(&topo).unwrap();
        let disc = sys.model.zoh_discretize(0.5).unwrap();
        build_stacked(&assemble_dae(&disc).unwrap(), degree)
    }

    fn zero_q(s: &StackedSystem) -> DMatrix<f64> {
        DMatrix::zeros(s.n_coeffs(), s.n_coeffs())
    }

    #[test]
    fn basis_spans_left_null_space() {
        let s = tie12_stacked(3);
        let v = feasible_basis(&s.bar_h);
        assert!(v.ncols() > 0);
        assert!((v.tr_mul(&s.bar_h)).amax() < 1e-12);
        assert!((v.tr_mul(&v) - DMatrix::identity(v.ncols(), v.ncols())).amax() < 1e-12);
    }

    #[test]
    fn program_index_mapping() {
        assert_eq!(program_block(1), (0, -1.0));
        assert_eq!(program_block(2), (0, 1.0));
        assert_eq!(program_block(7), (3, -1.0));
        assert_eq!(program_block(8), (3, 1.0));
    }

    #[test]
    fn pure_model_univariate_is_feasible() {
        let s = tie12_stacked(3);
        let opts = DesignOptions::new(3, 0.5, DesignMode::PureModel);
        let (d, outcomes) = design_univariate(&s, &zero_q(&s), &opts).unwrap();
        assert_eq!(outcomes.len(), 4);
        let attack = AttackModel::Univariate { f_min: -1.0, f_max: 1.0 };
        d.verify(&s, &attack).unwrap();
        let nf = d.nbar_fbar(&s);
        assert!((nf[d.branch.j].abs() - 1.0).abs() < 1e-7);
        let first = nf.iter().find(|v| v.abs() > 1e-12).unwrap();
        assert!(*first > 0.0);
    }

    #[test]
    fn tracking_gives_unit_gain() {
        let s = tie12_stacked(3);
        let mut opts = DesignOptions::new(3, 0.5, DesignMode::PureModel);
        opts.track_steady_state = true;
        let (d, outcomes) = design_univariate(&s, &zero_q(&s), &opts).unwrap();
        assert_eq!(outcomes.len(), 8);
        for &f in &[-0.1, 0.05, 0.2] {
            let r = steady_state_residual(&d, &s, &DVector::from_element(1, f));
            assert!((r - f).abs() < 1e-9);
        }
        assert_eq!(steady_state_residual(&d, &s, &DVector::zeros(1)), 0.0);
    }

    fn three_basis_attack() -> AttackModel {
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

    fn five_channel_stacked() -> StackedSystem {
        let cfg = ModelConfig::three_area_default();
        let ch = |area, to| AttackChannel { area, signal: AttackSignal::TieFlow { to }, ace_gain: None };
        let topo = AttackTopology {
            channels: vec![ch(1, 2), ch(2, 1), ch(2, 3), ch(3, 1), ch(3, 2)],
        };
        let sys = cfg.assemble(&topo).unwrap();
        let disc = sys.model.zoh_discretize(0.5).unwrap();
        build_stacked(&assemble_dae(&disc).unwrap(), 3)
    }

    #[test]
    fn zero_basis_is_undetectable() {
        let s = five_channel_stacked();
        let attack = AttackModel::Multivariate {
            basis: vec![vec![0.0; 5]; 3],
            a: vec![vec![1.0, 1.0, 1.0]],
            b: vec![1.5],
        };
        assert!(matches!(pretrain_multivariate(&s, &attack), Err(Error::DetectorInfeasible(_))));
    }

    #[test]
    fn multivariate_pipeline() {
        let s = five_channel_stacked();
        let attack = three_basis_attack();
        let pre = pretrain_multivariate(&s, &attack).unwrap();
        assert_eq!(pre.branches.len(), 8);
        assert!(pre.best_gamma > 0.0);
        let opts = DesignOptions::new(3, 0.5, DesignMode::PureModel);
        let d = design_multivariate(&s, &zero_q(&s), &attack, pre.best_j, pre.best_gamma, &opts).unwrap();
        d.verify(&s, &attack).unwrap();
        let gamma = d.gamma.unwrap();
        assert!(gamma > 0.0 && gamma <= pre.best_gamma * (1.0 + 1e-12));

        // strong duality between the inner LP and bᵀλ
        let alpha = worst_case_alpha(&d, &s, &attack).unwrap();
        let c = coupling_row(&d, &s, &attack, d.branch);
        let inner = c.dot(&alpha);
        let blam = attack.polytope_b().dot(&DVector::from_column_slice(&d.lambda));
        assert!((inner - blam).abs() <= 1e-7 * (1.0 + blam.abs()), "{inner} vs {blam}");
        assert!(inner >= gamma - 1e-7);

        let mu = steady_state_margin(&d, &s, &attack).unwrap();
        assert!(mu <= 1e-7, "μ = {mu}");
    }
}
