mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use robdiag::design::{
    design_multivariate, design_univariate, feasible_basis, gram_matrix, pretrain_multivariate, q_matrix, quad_form,
    steady_state_margin, steady_state_residual, worst_case_alpha,
};
use robdiag::lti::denominator_coeffs;
use robdiag::plant::simulate_linear;
use robdiag::runtime::ResidualState;
use robdiag::{
    AttackModel, AttackSpec, DesignMode, DesignOptions, DisturbanceKind, DisturbanceSpec, Error, FilterArtifact,
    ModelConfig,
};

fn gram_oracle(p: f64, d: usize, t: usize) -> DMatrix<f64> {
    let a = denominator(p, d);
    let cols: Vec<Vec<f64>> = (0..t)
        .map(|j| {
            let mut u = vec![0.0; t];
            u[j] = 1.0;
            // impulse at j through 1/a, delayed by d
            let mut w = vec![0.0; t];
            for k in d..t {
                let mut acc = u[k - d];
                for i in 0..d {
                    acc -= a[i] * w[k - d + i];
                }
                w[k] = acc / a[d];
            }
            w
        })
        .collect();
    DMatrix::from_fn(t, t, |i, j| cols[i].iter().zip(&cols[j]).map(|(x, y)| x * y).sum())
}

#[test]
fn gram_matches_brute_force() {
    for &p in &[0.0, 0.5, 0.8] {
        let g = gram_matrix(&denominator_coeffs(p, 3), p, 20).unwrap();
        let o = gram_oracle(p, 3, 20);
        assert!((&g - &o).amax() <= 1e-10, "p = {p}");
    }
    let g0 = gram_matrix(&denominator_coeffs(0.0, 3), 0.0, 20).unwrap();
    let expect = DMatrix::from_fn(20, 20, |i, j| if i == j && i < 17 { 1.0 } else { 0.0 });
    assert_eq!(g0, expect);
}

#[test]
fn keystone_on_the_agc_model() {
    let s = stacked(&tie12(), 3);
    let n_y = s.dae.dims.n_y;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let a = denominator(0.5, 3);
    let g = gram_matrix(&denominator_coeffs(0.5, 3), 0.5, 20).unwrap();
    for _ in 0..5 {
        let e = DMatrix::from_fn(n_y, 20, |_, _| rng.random_range(-0.1..0.1));
        let q = q_matrix(&s, &e, &g).unwrap().q;
        for _ in 0..5 {
            let z: Vec<f64> = (0..40).map(|_| rng.random_range(-1.0..1.0)).collect();
            let nbar = feasible_nbar(&s, &z);
            let direct = energy(&direct_residual(&nbar, &s.dae.l, &a, &e));
            let quad = quad_form(&q, &nbar);
            assert!((quad - direct).abs() <= 1e-8 * direct, "{quad} vs {direct}");
        }
    }
}

fn gaussian(seed: u64, sigma: f64, horizon: f64) -> DisturbanceSpec {
    DisturbanceSpec { areas: vec![1, 2, 3], kind: DisturbanceKind::Gaussian { sigma, hold: 1.0 }, seed, horizon }
}

#[test]
fn residual_splits_into_attack_and_mismatch_terms() {
    let topo = tie12();
    let sys = ModelConfig::three_area_default().assemble(&topo).unwrap();
    let disc = sys.model.zoh_discretize(0.5).unwrap();
    let s = stacked(&topo, 3);
    let opts = DesignOptions::new(3, 0.5, DesignMode::PureModel);
    let (d, _) = design_univariate(&s, &zero_q(&s), &opts).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for seed in 0..5 {
        let atk = AttackSpec::Univariate { channel: 0, value: 0.1, onset: 7.5 };
        let y = simulate_linear(&disc, &gaussian(seed, 0.05, 20.0), &atk).unwrap();
        let eps = DMatrix::from_fn(y.y.nrows(), y.y.ncols(), |_, _| rng.random_range(-0.01..0.01));
        let r = ResidualState::run(&d, &s.dae.l, &(&y.y + &eps)).unwrap();
        let f = DMatrix::from_fn(1, y.len(), |_, k| atk.at(y.t[k], 1)[0]);
        let attack_term: Vec<f64> = direct_residual(&d.nbar, &s.dae.f, &d.a_coeffs, &f).iter().map(|v| -v).collect();
        let mismatch_term = direct_residual(&d.nbar, &s.dae.l, &d.a_coeffs, &eps);
        for k in 0..r.len() {
            let expect = attack_term[k] + mismatch_term[k];
            assert!((r[k] - expect).abs() <= 1e-9, "k = {k}: {} vs {expect}", r[k]);
        }
    }
}

#[test]
fn tracking_filter_settles_on_the_attack_value() {
    let topo = tie12();
    let sys = ModelConfig::three_area_default().assemble(&topo).unwrap();
    let disc = sys.model.zoh_discretize(0.5).unwrap();
    let s = stacked(&topo, 3);
    let mut opts = DesignOptions::new(3, 0.5, DesignMode::PureModel);
    opts.track_steady_state = true;
    let (d, _) = design_univariate(&s, &zero_q(&s), &opts).unwrap();
    // closed-form gain -a(1)⁻¹ N(1) F, computed here from the raw blocks
    let n1: DVector<f64> = (0..=3).map(|i| DVector::from_column_slice(d.block(i))).sum();
    let gain = -(s.dae.f.tr_mul(&n1))[0] / d.a_coeffs.iter().sum::<f64>();
    assert!((gain - 1.0).abs() < 1e-7);
    for &f in &[-0.1, 0.05, 0.2] {
        assert!((steady_state_residual(&d, &s, &DVector::from_element(1, f)) - f).abs() < 1e-7);
        let none = DisturbanceSpec { areas: vec![1], kind: DisturbanceKind::Step { value: 0.0, start: 0.0 }, seed: 0, horizon: 40.0 };
        let y = simulate_linear(&disc, &none, &AttackSpec::Univariate { channel: 0, value: f, onset: 0.0 }).unwrap();
        let r = ResidualState::run(&d, &s.dae.l, &y.y).unwrap();
        let k30 = y.t.iter().position(|&t| t >= 30.0).unwrap();
        for k in k30..r.len() {
            assert!((r[k] - f).abs() <= 0.02 * f.abs(), "f = {f}, t = {}: r = {}", y.t[k], r[k]);
        }
    }
}

#[test]
fn designed_filters_annihilate_linear_outputs() {
    let topo = tie12();
    let sys = ModelConfig::three_area_default().assemble(&topo).unwrap();
    let disc = sys.model.zoh_discretize(0.5).unwrap();
    let s = stacked(&topo, 3);
    let mut opts = DesignOptions::new(3, 0.5, DesignMode::PureModel);
    opts.track_steady_state = true;
    let (d, _) = design_univariate(&s, &zero_q(&s), &opts).unwrap();
    for seed in 0..10 {
        let y = simulate_linear(&disc, &gaussian(seed, 0.1, 30.0), &AttackSpec::None).unwrap();
        let r = ResidualState::run(&d, &s.dae.l, &y.y).unwrap();
        assert!(r.iter().all(|v| v.abs() <= 1e-6), "seed {seed}");
    }
}

#[test]
fn univariate_branches_are_sign_canonical() {
    let s = stacked(&tie12(), 3);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = s.n_coeffs();
    let m = DMatrix::from_fn(n, 10, |_, _| rng.random_range(-1.0..1.0));
    let q = &m * m.transpose() * 1e-3;
    let opts = DesignOptions::new(3, 0.5, DesignMode::DataAssisted);
    let (d, _) = design_univariate(&s, &q, &opts).unwrap();
    let nf = d.nbar_fbar(&s);
    let first = nf.iter().find(|v| v.abs() > 1e-9).unwrap();
    assert!(*first > 0.0);
    let neg: Vec<f64> = d.nbar.iter().map(|v| -v).collect();
    assert!((quad_form(&q, &neg) - quad_form(&q, &d.nbar)).abs() <= 1e-15 * (1.0 + d.objective));
    // exhaustive signs reach the same optimum
    let mut both = opts.clone();
    both.symmetric_shortcut = false;
    let (d2, outcomes) = design_univariate(&s, &q, &both).unwrap();
    assert_eq!(outcomes.len(), 8);
    assert!((d2.objective - d.objective).abs() <= 1e-9 * (1.0 + d.objective));
}

#[test]
fn dominance_holds_and_is_strict_when_mismatch_is_visible() {
    let s = stacked(&tie12(), 3);
    let v = feasible_basis(&s.bar_h);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let g = gram_matrix(&denominator_coeffs(0.5, 3), 0.5, 20).unwrap();
    let pure = design_univariate(&s, &zero_q(&s), &DesignOptions::new(3, 0.5, DesignMode::PureModel)).unwrap().0;
    for _ in 0..5 {
        let e = DMatrix::from_fn(s.dae.dims.n_y, 20, |_, _| rng.random_range(-0.05..0.05));
        let q = q_matrix(&s, &e, &g).unwrap().q;
        let da = design_univariate(&s, &q, &DesignOptions::new(3, 0.5, DesignMode::DataAssisted)).unwrap().0;
        let (obj_da, obj_pm) = (quad_form(&q, &da.nbar), quad_form(&q, &pure.nbar));
        let restricted = v.transpose() * &q * &v;
        assert!(restricted.amax() > 1e-9);
        assert!(obj_da < obj_pm - 1e-9, "{obj_da} vs {obj_pm}");
    }
}

#[test]
fn pretraining_finds_a_positive_level() {
    let s = stacked(&five_ties(), 3);
    let pre = pretrain_multivariate(&s, &three_basis_attack()).unwrap();
    assert_eq!(pre.branches.len(), 8);
    assert!(pre.branches.iter().any(|b| b.gamma_star > 0.0));
    assert!(pre.best_gamma > 0.0 && pre.best_gamma.is_finite());
}

#[test]
fn multivariate_design_is_stealthy_in_steady_state() {
    let s = stacked(&five_ties(), 3);
    let attack = three_basis_attack();
    let pre = pretrain_multivariate(&s, &attack).unwrap();
    let d = design_multivariate(&s, &zero_q(&s), &attack, pre.best_j, pre.best_gamma, &DesignOptions::new(3, 0.5, DesignMode::PureModel)).unwrap();
    d.verify(&s, &attack).unwrap();
    let alpha = worst_case_alpha(&d, &s, &attack).unwrap();
    assert!(alpha.iter().all(|&a| a >= -1e-9) && alpha.sum() <= 1.5 + 1e-9);
    // an admissible α with zero steady-state residual exists, so μ = 0
    let mu = steady_state_margin(&d, &s, &attack).unwrap();
    assert!(mu <= 1e-7, "μ = {mu}");
    assert!(steady_state_residual(&d, &s, &DVector::zeros(5)).abs() < 1e-15);
}

#[test]
fn multivariate_objective_grows_with_gamma() {
    let s = stacked(&five_ties(), 3);
    let attack = three_basis_attack();
    let pre = pretrain_multivariate(&s, &attack).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let g = gram_matrix(&denominator_coeffs(0.5, 3), 0.5, 20).unwrap();
    let e = DMatrix::from_fn(s.dae.dims.n_y, 20, |_, _| rng.random_range(-0.05..0.05));
    let q = q_matrix(&s, &e, &g).unwrap().q;
    let opts = DesignOptions::new(3, 0.5, DesignMode::DataAssisted);
    let mut last = 0.0;
    for frac in [0.1, 0.25, 0.5, 0.75, 1.0] {
        let d = design_multivariate(&s, &q, &attack, pre.best_j, frac * pre.best_gamma, &opts).unwrap();
        assert!(d.objective >= last - 1e-12 * (1.0 + last), "γ fraction {frac}: {} < {last}", d.objective);
        last = d.objective;
    }
}

#[test]
fn infeasible_attack_directions_are_reported() {
    let s = stacked(&five_ties(), 3);
    let attack = AttackModel::Multivariate { basis: vec![vec![0.0; 5]; 3], a: vec![vec![1.0, 1.0, 1.0]], b: vec![1.5] };
    assert!(matches!(pretrain_multivariate(&s, &attack), Err(Error::DetectorInfeasible(_))));
}

#[test]
fn artifact_round_trip_and_hash_check() {
    let s = stacked(&tie12(), 3);
    let mut opts = DesignOptions::new(3, 0.5, DesignMode::PureModel);
    opts.track_steady_state = true;
    let (d, _) = design_univariate(&s, &zero_q(&s), &opts).unwrap();
    let attack = AttackModel::Univariate { f_min: -0.5, f_max: 0.5 };
    let art = FilterArtifact::new("abc".into(), attack, d);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("filter.json");
    art.write(&path).unwrap();
    let back = FilterArtifact::load(&path, "abc", &s).unwrap();
    assert_eq!(back, art);
    // bit-exact coefficients survive the text format
    for (x, y) in back.design.nbar.iter().zip(&art.design.nbar) {
        assert_eq!(x.to_bits(), y.to_bits());
    }
    match FilterArtifact::load(&path, "other", &s) {
        Err(Error::HashMismatch { expected, found }) => {
            assert_eq!(expected, "abc");
            assert_eq!(found, "other");
        }
        other => panic!("expected a hash mismatch, got {other:?}"),
    }
    // tampered coefficients fail the invariant check
    let mut bad = art.clone();
    bad.design.nbar[0] += 1.0;
    assert!(matches!(FilterArtifact::from_json(&bad.to_json(), "abc", &s), Err(Error::Artifact(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn keystone_for_random_signatures(seed in any::<u64>(), p in 0.0f64..0.9) {
        let s = stacked(&tie12(), 3);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = rng.random_range(8..30usize);
        let e = DMatrix::from_fn(s.dae.dims.n_y, t, |_, _| rng.random_range(-1.0..1.0));
        let g = gram_matrix(&denominator_coeffs(p, 3), p, t).unwrap();
        let q = q_matrix(&s, &e, &g).unwrap().q;
        let z: Vec<f64> = (0..30).map(|_| rng.random_range(-1.0..1.0)).collect();
        let nbar = feasible_nbar(&s, &z);
        let direct = energy(&direct_residual(&nbar, &s.dae.l, &denominator(p, 3), &e));
        prop_assert!((quad_form(&q, &nbar) - direct).abs() <= 1e-8 * direct.max(1e-300));
        let min = q.symmetric_eigen().eigenvalues.min();
        prop_assert!(min >= -1e-9);
    }
}
