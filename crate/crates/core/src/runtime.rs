//! Online residual generation and thresholding.
//!
//! `a(q) r = N(q) L y_p` is run as the causal difference equation
//!
//! ```text
//! r[k] = ( Σ_{i=0}^{d} N_i L y_p[k-d+i] - Σ_{i<d} a_i r[k-d+i] ) / a_d
//! ```
//!
//! once `d+1` samples have arrived. The first `d` residuals are zero
//! (warm-up), so the residual of a finite record has exactly the energy the
//! quadratic form `N̄ Q N̄ᵀ` assigns to it.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::design::{quad_form, FilterDesign};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct ResidualState {
    /// Rows `N_i L`, one per coefficient block.
    weights: Vec<DVector<f64>>,
    a: Vec<f64>,
    /// Last `d+1` output samples, oldest first.
    inputs: VecDeque<DVector<f64>>,
    /// Last `d` residuals, oldest first.
    residuals: VecDeque<f64>,
    k: usize,
}

impl ResidualState {
    pub fn new(design: &FilterDesign, l: &DMatrix<f64>) -> Result<Self> {
        let d = design.degree;
        if l.nrows() != design.n_r {
            return Err(Error::Dimension(format!("L has {} rows, filter expects {}", l.nrows(), design.n_r)));
        }
        if !(design.pole.abs() < 1.0) || design.a_coeffs.len() != d + 1 || design.a_coeffs[d] == 0.0 {
            return Err(Error::InvalidInput("filter denominator is not a stable degree-d polynomial".into()));
        }
        let weights = (0..=d).map(|i| l.tr_mul(&DVector::from_column_slice(design.block(i)))).collect();
        Ok(ResidualState {
            weights,
            a: design.a_coeffs.clone(),
            inputs: VecDeque::with_capacity(d + 1),
            residuals: VecDeque::from(vec![0.0; d]),
            k: 0,
        })
    }

    pub fn degree(&self) -> usize {
        self.a.len() - 1
    }

    pub fn n_y(&self) -> usize {
        self.weights[0].len()
    }

    /// Samples consumed so far.
    pub fn samples(&self) -> usize {
        self.k
    }

    /// The first `d` residuals are held at zero.
    pub fn in_warm_up(&self) -> bool {
        self.k <= self.degree()
    }

    pub fn step(&mut self, y: &[f64]) -> Result<f64> {
        let d = self.degree();
        if y.len() != self.n_y() {
            return Err(Error::Dimension(format!("sample has {} outputs, expected {}", y.len(), self.n_y())));
        }
        if self.inputs.len() == d + 1 {
            self.inputs.pop_front();
        }
        self.inputs.push_back(DVector::from_column_slice(y));
        // once full, inputs[i] is y[k-d+i]
        let mut acc = 0.0;
        if self.inputs.len() == d + 1 {
            for (w, yk) in self.weights.iter().zip(&self.inputs) {
                acc += w.dot(yk);
            }
            for i in 0..d {
                acc -= self.a[i] * self.residuals[i];
            }
        }
        let r = acc / self.a[d];
        if d > 0 {
            self.residuals.pop_front();
            self.residuals.push_back(r);
        }
        self.k += 1;
        Ok(r)
    }

    /// Runs a whole `n_y × T` trajectory through a fresh state.
    pub fn run(design: &FilterDesign, l: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<Vec<f64>> {
        let mut st = ResidualState::new(design, l)?;
        y.column_iter().map(|c| st.step(c.as_slice())).collect()
    }
}

/// Sliding-window energy `sqrt(Σ_{κ=k-w+1}^{k} r[κ]²)`, zero-padded.
pub fn residual_energy(r: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 {
        return Err(Error::InvalidInput("energy window must be >= 1".into()));
    }
    let mut out = Vec::with_capacity(r.len());
    for k in 0..r.len() {
        let start = (k + 1).saturating_sub(window);
        out.push(r[start..=k].iter().map(|v| v * v).sum::<f64>().sqrt());
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detector {
    pub tau_star: f64,
    pub margin: f64,
    pub window: usize,
}

impl Detector {
    pub fn threshold(&self) -> f64 {
        self.tau_star + self.margin
    }

    /// Evaluates a residual trace; samples inside the filter warm-up are
    /// never flagged. The alarm latches at the first crossing.
    pub fn evaluate(&self, r: &[f64], t: &[f64], warm_up: usize) -> Result<DetectionSummary> {
        let energy = residual_energy(r, self.window)?;
        let thr = self.threshold();
        let first = (warm_up..energy.len()).find(|&k| energy[k] > thr);
        let alarm: Vec<bool> = (0..energy.len()).map(|k| first.is_some_and(|f| k >= f)).collect();
        Ok(DetectionSummary {
            first_alarm: first.map(|k| t[k]),
            max_energy: energy.iter().skip(warm_up).fold(0.0, |m: f64, &e| m.max(e)),
            final_energy: energy.last().copied().unwrap_or(0.0),
            threshold: thr,
            energy,
            alarm,
        })
    }
}

/// `τ* = sqrt(max_i N̄ Q_i N̄ᵀ)`, threshold `τ* + margin`.
pub fn calibrate_threshold(design: &FilterDesign, qs: &[DMatrix<f64>], margin: f64, window: usize) -> Result<Detector> {
    if qs.is_empty() {
        return Err(Error::InvalidInput("calibration needs at least one training instance".into()));
    }
    if !(margin >= 0.0) || window == 0 {
        return Err(Error::InvalidInput("margin must be >= 0 and window >= 1".into()));
    }
    let worst = qs.iter().map(|q| quad_form(q, &design.nbar)).fold(0.0f64, f64::max);
    let det = Detector {
        tau_star: worst.sqrt(),
        margin,
        window,
    };
    if !(det.threshold() > 0.0) {
        return Err(Error::InvalidInput("threshold must be positive".into()));
    }
    Ok(det)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionSummary {
    pub first_alarm: Option<f64>,
    pub max_energy: f64,
    pub final_energy: f64,
    pub threshold: f64,
    #[serde(skip)]
    pub energy: Vec<f64>,
    #[serde(skip)]
    pub alarm: Vec<bool>,
}

impl DetectionSummary {
    pub fn alarmed(&self) -> bool {
        self.first_alarm.is_some()
    }
}

/// `t,r,energy,alarm` rows.
pub fn residual_csv(t: &[f64], r: &[f64], summary: &DetectionSummary) -> String {
    let mut s = String::from("t,r,energy,alarm\n");
    for k in 0..r.len() {
        let _ = writeln!(s, "{},{},{},{}", t[k], r[k], summary.energy[k], u8::from(summary.alarm[k]));
    }
    s
}

pub fn write_residual_csv(path: impl AsRef<Path>, t: &[f64], r: &[f64], summary: &DetectionSummary) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, residual_csv(t, r, summary)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{Branch, DesignMode, FilterKind};
    use crate::lti::denominator_coeffs;
    use proptest::prelude::*;

    fn filter(nbar: Vec<f64>, n_r: usize, degree: usize, pole: f64) -> FilterDesign {
        FilterDesign {
            kind: FilterKind::Univariate,
            mode: DesignMode::PureModel,
            degree,
            pole,
            a_coeffs: denominator_coeffs(pole, degree),
            n_r,
            nbar,
            objective: 0.0,
            branch: Branch { j: 0, sign: 1 },
            track_steady_state: false,
            gamma: None,
            lambda: Vec::new(),
        }
    }

    #[test]
    fn zero_input_zero_output() {
        let l = DMatrix::identity(2, 2);
        let f = filter(vec![1.0, -2.0, 0.5, 0.3, 0.0, 1.0], 2, 2, 0.4);
        let r = ResidualState::run(&f, &l, &DMatrix::zeros(2, 30)).unwrap();
        assert!(r.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn impulse_matches_convolution() {
        // scalar channel, N(q) = n0 + n1 q + n2 q², a(q) = (q - p)²/(1-p)²
        let (p, n) = (0.6, [0.7, -1.1, 0.4]);
        let f = filter(n.to_vec(), 1, 2, p);
        let mut y = DMatrix::zeros(1, 25);
        y[(0, 3)] = 1.0;
        let r = ResidualState::run(&f, &DMatrix::identity(1, 1), &y).unwrap();
        // h = impulse response of 1/a; r = Σ_i n_i h[k - 3 + i] (q^i advances)
        let h = crate::design::impulse_response(&f.a_coeffs, 40).unwrap();
        for k in 0..25 {
            let mut expect = 0.0;
            for (i, ni) in n.iter().enumerate() {
                let m = k as isize - 3 + i as isize;
                if m >= 0 {
                    expect += ni * h[m as usize];
                }
            }
            assert!((r[k] - expect).abs() < 1e-12, "k={k}: {} vs {expect}", r[k]);
        }
    }

    #[test]
    fn warm_up_residuals_are_zero() {
        let f = filter(vec![1.0, 2.0, 3.0], 1, 2, 0.5);
        let y = DMatrix::from_element(1, 5, 1.0);
        let r = ResidualState::run(&f, &DMatrix::identity(1, 1), &y).unwrap();
        assert_eq!(r[..2], [0.0, 0.0]);
        // a_2 = 1/(1-p)² = 4, so r[2] = (1 + 2 + 3)/4
        assert!((r[2] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn causality() {
        let f = filter(vec![0.2, 1.0, -0.3, 0.5], 1, 3, 0.3);
        let l = DMatrix::identity(1, 1);
        let a = DMatrix::from_fn(1, 30, |_, k| (k as f64 * 0.7).sin());
        let mut b = a.clone();
        for k in 20..30 {
            b[(0, k)] = 5.0;
        }
        let ra = ResidualState::run(&f, &l, &a).unwrap();
        let rb = ResidualState::run(&f, &l, &b).unwrap();
        assert_eq!(ra[..20], rb[..20]);
    }

    #[test]
    fn wrong_sample_width_rejected() {
        let f = filter(vec![1.0, 1.0], 1, 1, 0.0);
        let mut st = ResidualState::new(&f, &DMatrix::identity(1, 1)).unwrap();
        assert!(st.step(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn energy_examples() {
        let r = vec![0.5; 30];
        let e = residual_energy(&r, 20).unwrap();
        assert!((e[29] - 0.5 * 20f64.sqrt()).abs() < 1e-12);
        assert!((e[3] - 0.5 * 2.0).abs() < 1e-12);
        let r = vec![1.0, -2.0, 3.0];
        assert_eq!(residual_energy(&r, 1).unwrap(), vec![1.0, 2.0, 3.0]);
        assert!(residual_energy(&r, 0).is_err());
    }

    #[test]
    fn calibration() {
        let f = filter(vec![1.0, 2.0], 2, 0, 0.0);
        let zero = DMatrix::zeros(2, 2);
        let d = calibrate_threshold(&f, &[zero.clone(), zero], 0.025, 20).unwrap();
        assert_eq!(d.tau_star, 0.0);
        assert_eq!(d.threshold(), 0.025);
        let q = DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 1.0]);
        let d = calibrate_threshold(&f, &[q, DMatrix::identity(2, 2)], 0.1, 20).unwrap();
        assert!((d.tau_star - 8f64.sqrt()).abs() < 1e-12);
        assert!(calibrate_threshold(&f, &[], 0.1, 20).is_err());
        assert!(calibrate_threshold(&f, &[DMatrix::zeros(2, 2)], 0.0, 20).is_err());
    }

    #[test]
    fn alarm_latches_and_skips_warm_up() {
        let det = Detector { tau_star: 0.0, margin: 0.5, window: 1 };
        let r = [0.9, 0.0, 0.0, 0.8, 0.0, 0.0];
        let t: Vec<f64> = (0..6).map(|k| k as f64 * 0.5).collect();
        let s = det.evaluate(&r, &t, 2).unwrap();
        assert_eq!(s.first_alarm, Some(1.5));
        assert_eq!(s.alarm, vec![false, false, false, true, true, true]);
        let csv = residual_csv(&t, &r, &s);
        assert!(csv.starts_with("t,r,energy,alarm\n0,0.9,0.9,0\n"));
    }

    proptest! {
        #[test]
        fn bounded_input_bounded_output(seed in 0u64..500, pole in -0.9f64..0.9) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let f = filter(n.clone(), 1, 3, pole);
            let y = DMatrix::from_fn(1, 2000, |_, _| rng.random_range(-1.0..1.0));
            let r = ResidualState::run(&f, &DMatrix::identity(1, 1), &y).unwrap();
            // ℓ1 gain bound: Σ|n_i| · Σ|h|
            let h = crate::design::impulse_response(&f.a_coeffs, 4000).unwrap();
            let gain: f64 = n.iter().map(|v| v.abs()).sum::<f64>() * h.iter().map(|v| v.abs()).sum::<f64>();
            prop_assert!(r.iter().all(|v| v.abs() <= gain * 1.0 + 1e-9));
        }
    }
}
