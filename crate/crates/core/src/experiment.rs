//! End-to-end experiment pipeline: pretrain, train, design, test.
//!
//! Directory layout written under the output directory (layout version 1):
//!
//! ```text
//! experiment.toml   model.toml   plant.toml      resolved configuration
//! pretrain.json                                   γ*_j table (multivariate)
//! train/summary.json, train/eps_NNN.csv           mismatch signatures
//! train/q_bar.csv                                 only with dump_matrices
//! design/filter.json, design/detector.json, design/report.json
//! test/clean_NN.csv, test/attack_NN.csv           residual traces
//! test/report.json
//! ```
//!
//! Every file is a pure function of the configuration and the top-level
//! seed. Training instance `i` uses seed `seed·2²⁰ + i`, held-out run `i`
//! uses `seed·2²⁰ + 2¹⁹ + i`, so the two ranges never overlap.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agc::{AgcSystem, AttackTopology, ModelConfig};
use crate::design::{
    self, average_q, design_multivariate, design_univariate, gram_matrix, pretrain_multivariate, q_matrices,
    quad_form, steady_state_margin, worst_case_alpha, AttackModel, BranchOutcome, DesignMode, DesignOptions,
    FilterArtifact, FilterDesign, PretrainReport,
};
use crate::error::{Error, Result};
use crate::lti::{assemble_dae, build_stacked, LinearModel, StackedSystem};
use crate::matio;
use crate::plant::{
    simulate_linear, simulate_nonlinear, AttackSpec, DisturbanceKind, DisturbanceSpec, NonlinearPlantConfig,
};
use crate::runtime::{calibrate_threshold, write_residual_csv, DetectionSummary, Detector, ResidualState};

pub const LAYOUT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceTemplate {
    pub areas: Vec<usize>,
    pub kind: DisturbanceKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub instances: usize,
    pub horizon: f64,
    pub disturbance: DisturbanceTemplate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestConfig {
    pub runs: usize,
    pub horizon: f64,
    pub onset: f64,
    pub margin: f64,
    /// Energy window in samples.
    pub window: usize,
    /// Injected bias for univariate experiments; multivariate experiments
    /// launch the worst-case `α*`.
    #[serde(default)]
    pub attack_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    /// Model and plant files, relative to the experiment file.
    pub model: PathBuf,
    pub plant: PathBuf,
    pub topology: AttackTopology,
    pub attack: AttackModel,
    pub design: DesignOptions,
    pub train: TrainConfig,
    pub test: TestConfig,
    #[serde(default)]
    pub dump_matrices: bool,
}

/// A loaded, validated experiment with its assembled models.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub cfg: ExperimentConfig,
    pub model: ModelConfig,
    pub plant: NonlinearPlantConfig,
    pub system: AgcSystem,
    pub discrete: LinearModel,
    pub stacked: StackedSystem,
    pub hash: String,
}

fn config_err(e: Error) -> Error {
    match e {
        Error::Config(_) | Error::Io { .. } => e,
        other => Error::Config(other.to_string()),
    }
}

impl Experiment {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ExperimentConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let model = ModelConfig::load(base.join(&cfg.model)).map_err(config_err)?;
        let plant_path = base.join(&cfg.plant);
        let plant_text = std::fs::read_to_string(&plant_path).map_err(|e| Error::io(&plant_path, e))?;
        let plant: NonlinearPlantConfig =
            toml::from_str(&plant_text).map_err(|e| Error::Config(format!("{}: {e}", plant_path.display())))?;
        Self::from_parts(cfg, model, plant)
    }

    pub fn from_parts(cfg: ExperimentConfig, model: ModelConfig, plant: NonlinearPlantConfig) -> Result<Self> {
        plant.validate().map_err(config_err)?;
        cfg.design.validate().map_err(config_err)?;
        if cfg.train.instances == 0 || cfg.test.runs == 0 {
            return Err(Error::Config("need at least one training instance and one test run".into()));
        }
        if cfg.test.window == 0 || !(cfg.test.margin >= 0.0) {
            return Err(Error::Config("test window must be >= 1 and margin >= 0".into()));
        }
        if !(cfg.test.onset >= 0.0 && cfg.test.onset < cfg.test.horizon) {
            return Err(Error::Config("attack onset must lie inside the test horizon".into()));
        }
        let system = model.assemble(&cfg.topology).map_err(config_err)?;
        let n_f = system.model.n_f();
        cfg.attack.validate(n_f).map_err(config_err)?;
        if matches!(cfg.attack, AttackModel::Univariate { .. }) && cfg.test.attack_value.is_none() {
            return Err(Error::Config("univariate experiments need test.attack_value".into()));
        }
        let discrete = system.model.zoh_discretize(plant.ts).map_err(config_err)?;
        let stacked = build_stacked(&assemble_dae(&discrete)?, cfg.design.degree);
        let hash = artifact_hash(&model, &cfg.topology, plant.ts);
        Ok(Experiment {
            cfg,
            model,
            plant,
            system,
            discrete,
            stacked,
            hash,
        })
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.cfg.seed = seed;
        self
    }

    pub fn with_mode(mut self, mode: DesignMode) -> Self {
        self.cfg.design.mode = mode;
        self
    }

    pub fn train_seed(&self, i: usize) -> u64 {
        (self.cfg.seed << 20).wrapping_add(i as u64)
    }

    pub fn test_seed(&self, i: usize) -> u64 {
        (self.cfg.seed << 20).wrapping_add((1 << 19) + i as u64)
    }

    fn disturbance(&self, seed: u64, horizon: f64) -> DisturbanceSpec {
        DisturbanceSpec {
            areas: self.cfg.train.disturbance.areas.clone(),
            kind: self.cfg.train.disturbance.kind.clone(),
            seed,
            horizon,
        }
    }

    fn is_multivariate(&self) -> bool {
        matches!(self.cfg.attack, AttackModel::Multivariate { .. })
    }

    /// Writes the resolved configuration into `out`.
    pub fn write_config(&self, out: &Path) -> Result<()> {
        create_dir(out)?;
        write_text(&out.join("experiment.toml"), &toml::to_string(&self.cfg).expect("serializable"))?;
        write_text(&out.join("model.toml"), &self.model.to_toml_string())?;
        write_text(&out.join("plant.toml"), &toml::to_string(&self.plant).expect("serializable"))
    }
}

/// SHA-256 over the model parameters, attack topology and sampling time.
pub fn artifact_hash(model: &ModelConfig, topology: &AttackTopology, ts: f64) -> String {
    let canonical = serde_json::to_string(&(model, topology, ts)).expect("serializable");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

fn create_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn write_text(p: &Path, s: &str) -> Result<()> {
    std::fs::write(p, s).map_err(|e| Error::io(p, e))
}

fn write_json<T: Serialize>(p: &Path, v: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    write_text(p, &s)
}

fn read_json<T: for<'de> Deserialize<'de>>(p: &Path) -> Result<T> {
    let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Artifact(format!("{}: {e}", p.display())))
}

// ---------------------------------------------------------------- pretrain

pub fn cmd_pretrain(exp: &Experiment, out: &Path) -> Result<PretrainReport> {
    if !exp.is_multivariate() {
        return Err(Error::Config("pretraining needs a multivariate attack model".into()));
    }
    create_dir(out)?;
    let report = pretrain_multivariate(&exp.stacked, &exp.cfg.attack)?;
    write_json(&out.join("pretrain.json"), &report)?;
    Ok(report)
}

// ------------------------------------------------------------------- train

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSummary {
    pub seed: u64,
    pub max_abs_mismatch: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub layout: u32,
    pub instances: Vec<InstanceSummary>,
    pub samples: usize,
}

/// Mismatch signatures of the training runs, in seed order.
#[derive(Debug, Clone)]
pub struct TrainingBundle {
    pub signatures: Vec<DMatrix<f64>>,
    pub summary: TrainSummary,
}

pub fn simulate_training(exp: &Experiment) -> Result<TrainingBundle> {
    let m = exp.cfg.train.instances;
    let results: Vec<Result<(DMatrix<f64>, InstanceSummary)>> = (0..m)
        .into_par_iter()
        .map(|i| {
            let seed = exp.train_seed(i);
            let dist = exp.disturbance(seed, exp.cfg.train.horizon);
            let y_p = simulate_nonlinear(&exp.model.areas, &exp.system, &exp.plant, &dist, &AttackSpec::None)?;
            let y = simulate_linear(&exp.discrete, &dist, &AttackSpec::None)?;
            let e = design::mismatch_signature(&y_p, &y)?;
            let summary = InstanceSummary {
                seed,
                max_abs_mismatch: e.amax(),
            };
            Ok((e, summary))
        })
        .collect();
    let mut signatures = Vec::with_capacity(m);
    let mut instances = Vec::with_capacity(m);
    for r in results {
        let (e, s) = r?;
        signatures.push(e);
        instances.push(s);
    }
    let samples = signatures[0].ncols();
    Ok(TrainingBundle {
        signatures,
        summary: TrainSummary {
            layout: LAYOUT_VERSION,
            instances,
            samples,
        },
    })
}

pub fn cmd_train(exp: &Experiment, out: &Path) -> Result<TrainingBundle> {
    let bundle = simulate_training(exp)?;
    let dir = out.join("train");
    create_dir(&dir)?;
    for (i, e) in bundle.signatures.iter().enumerate() {
        matio::write_csv(dir.join(format!("eps_{i:03}.csv")), e)?;
    }
    write_json(&dir.join("summary.json"), &bundle.summary)?;
    if exp.cfg.dump_matrices {
        let (_, q_bar) = training_forms(exp, &bundle, DesignMode::DataAssisted)?;
        matio::write_csv(dir.join("q_bar.csv"), &q_bar)?;
    }
    Ok(bundle)
}

pub fn load_bundle(out: &Path) -> Result<TrainingBundle> {
    let dir = out.join("train");
    let summary: TrainSummary = read_json(&dir.join("summary.json"))?;
    let signatures = (0..summary.instances.len())
        .map(|i| matio::read_csv(dir.join(format!("eps_{i:03}.csv"))))
        .collect::<Result<Vec<_>>>()?;
    Ok(TrainingBundle { signatures, summary })
}

/// Per-instance `Q_i` and their average; all zero in pure-model mode.
pub fn training_forms(
    exp: &Experiment,
    bundle: &TrainingBundle,
    mode: DesignMode,
) -> Result<(Vec<DMatrix<f64>>, DMatrix<f64>)> {
    let n = exp.stacked.n_coeffs();
    if mode == DesignMode::PureModel {
        let zeros = vec![DMatrix::zeros(n, n); bundle.signatures.len().max(1)];
        return Ok((zeros, DMatrix::zeros(n, n)));
    }
    let g = gram_matrix(
        &crate::lti::denominator_coeffs(exp.cfg.design.pole, exp.cfg.design.degree),
        exp.cfg.design.pole,
        bundle.summary.samples,
    )?;
    let qs: Vec<DMatrix<f64>> = q_matrices(&exp.stacked, &bundle.signatures, &g)?.into_iter().map(|m| m.q).collect();
    let q_bar = average_q(&qs)?;
    Ok((qs, q_bar))
}

// ------------------------------------------------------------------ design

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dominance {
    /// `N̄Q̄N̄ᵀ` of the data-assisted filter.
    pub data_assisted: f64,
    /// Pure-model filter on the same `Q̄`, rescaled to the same constraint
    /// level (`(γ_da/γ_pm)²` for multivariate designs).
    pub pure_model: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DesignReport {
    pub layout: u32,
    pub mode: DesignMode,
    pub objective: f64,
    pub branch: design::Branch,
    #[serde(default)]
    pub branches: Vec<BranchOutcome>,
    #[serde(default)]
    pub pretrain: Option<PretrainReport>,
    pub gamma: Option<f64>,
    pub gamma_iterations: usize,
    pub gamma_tol: f64,
    pub dominance: Option<Dominance>,
    pub detector: Detector,
    pub model_hash: String,
}

pub struct DesignOutcome {
    pub artifact: FilterArtifact,
    pub detector: Detector,
    pub report: DesignReport,
}

fn synthesize(
    exp: &Experiment,
    q_bar: &DMatrix<f64>,
    mode: DesignMode,
) -> Result<(FilterDesign, Vec<BranchOutcome>, Option<PretrainReport>)> {
    let mut opts = exp.cfg.design.clone();
    opts.mode = mode;
    if exp.is_multivariate() {
        let pre = pretrain_multivariate(&exp.stacked, &exp.cfg.attack)?;
        let d = design_multivariate(&exp.stacked, q_bar, &exp.cfg.attack, pre.best_j, pre.best_gamma, &opts)?;
        Ok((d, Vec::new(), Some(pre)))
    } else {
        let (d, outcomes) = design_univariate(&exp.stacked, q_bar, &opts)?;
        Ok((d, outcomes, None))
    }
}

/// Dominance tolerance scales with `Q̄` and the filter norms.
pub fn dominance(q_bar: &DMatrix<f64>, data: &FilterDesign, pure: &FilterDesign) -> Dominance {
    let scale = match (data.gamma, pure.gamma) {
        (Some(gd), Some(gp)) if gp > 0.0 => (gd / gp).powi(2),
        _ => 1.0,
    };
    let da = quad_form(q_bar, &data.nbar);
    let pm = quad_form(q_bar, &pure.nbar) * scale;
    let norm2 = |n: &[f64]| n.iter().map(|v| v * v).sum::<f64>();
    let tol = 1e-9 * q_bar.amax() * norm2(&data.nbar).max(norm2(&pure.nbar) * scale).max(1.0);
    Dominance {
        data_assisted: da,
        pure_model: pm,
        holds: da <= pm + tol,
    }
}

pub fn cmd_design(exp: &Experiment, bundle: Option<&TrainingBundle>, out: &Path) -> Result<DesignOutcome> {
    let mode = exp.cfg.design.mode;
    let (qs, q_bar) = match (mode, bundle) {
        (DesignMode::DataAssisted, Some(b)) => training_forms(exp, b, mode)?,
        (DesignMode::DataAssisted, None) => {
            return Err(Error::Config("data-assisted design needs a training bundle".into()));
        }
        (DesignMode::PureModel, _) => {
            let n = exp.stacked.n_coeffs();
            (vec![DMatrix::zeros(n, n)], DMatrix::zeros(n, n))
        }
    };
    let (design, branches, pretrain) = synthesize(exp, &q_bar, mode)?;
    let dominance = if mode == DesignMode::DataAssisted {
        let (pure, _, _) = synthesize(exp, &DMatrix::zeros(q_bar.nrows(), q_bar.ncols()), DesignMode::PureModel)?;
        let dom = dominance(&q_bar, &design, &pure);
        if !dom.holds {
            return Err(Error::Numerical(format!(
                "data-assisted objective {} exceeds the pure-model value {}",
                dom.data_assisted, dom.pure_model
            )));
        }
        Some(dom)
    } else {
        None
    };
    let detector = calibrate_threshold(&design, &qs, exp.cfg.test.margin, exp.cfg.test.window)?;
    let artifact = FilterArtifact::new(exp.hash.clone(), exp.cfg.attack.clone(), design);
    artifact.design.verify(&exp.stacked, &exp.cfg.attack)?;

    let dir = out.join("design");
    create_dir(&dir)?;
    artifact.write(dir.join("filter.json"))?;
    write_json(&dir.join("detector.json"), &detector)?;
    let report = DesignReport {
        layout: LAYOUT_VERSION,
        mode,
        objective: artifact.design.objective,
        branch: artifact.design.branch,
        branches,
        pretrain,
        gamma: artifact.design.gamma,
        gamma_iterations: exp.cfg.design.gamma_iterations,
        gamma_tol: exp.cfg.design.gamma_tol,
        dominance,
        detector,
        model_hash: exp.hash.clone(),
    };
    write_json(&dir.join("report.json"), &report)?;
    Ok(DesignOutcome {
        artifact,
        detector,
        report,
    })
}

// -------------------------------------------------------------------- test

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub clean: DetectionSummary,
    pub attacked: DetectionSummary,
    /// First alarm at or after the onset.
    pub detected: bool,
    pub latency: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub layout: u32,
    pub mode: DesignMode,
    pub threshold: f64,
    pub tau_star: f64,
    pub attack: Vec<f64>,
    pub alpha: Option<Vec<f64>>,
    pub steady_state_margin: Option<f64>,
    pub false_alarms: usize,
    pub detections: usize,
    pub runs: Vec<RunResult>,
}

/// The attack vector launched in the test phase.
pub fn test_attack(exp: &Experiment, design: &FilterDesign) -> Result<(DVector<f64>, Option<DVector<f64>>)> {
    match &exp.cfg.attack {
        AttackModel::Univariate { .. } => {
            let v = exp.cfg.test.attack_value.expect("validated");
            Ok((DVector::from_element(1, v), None))
        }
        AttackModel::Multivariate { .. } => {
            let alpha = worst_case_alpha(design, &exp.stacked, &exp.cfg.attack)?;
            Ok((exp.cfg.attack.basis_matrix() * &alpha, Some(alpha)))
        }
    }
}

pub fn evaluate(exp: &Experiment, artifact: &FilterArtifact, detector: &Detector, out: Option<&Path>) -> Result<TestReport> {
    let design = &artifact.design;
    let (f, alpha) = test_attack(exp, design)?;
    let onset = exp.cfg.test.onset;
    let atk = if f.len() == 1 {
        AttackSpec::Univariate {
            channel: 0,
            value: f[0],
            onset,
        }
    } else {
        AttackSpec::Multivariate {
            values: f.iter().copied().collect(),
            onset,
        }
    };
    let l = &exp.stacked.dae.l;
    let warm_up = design.degree;
    let dir = out.map(|o| o.join("test"));
    if let Some(d) = &dir {
        create_dir(d)?;
    }
    let runs: Vec<Result<RunResult>> = (0..exp.cfg.test.runs)
        .into_par_iter()
        .map(|i| {
            let seed = exp.test_seed(i);
            let dist = exp.disturbance(seed, exp.cfg.test.horizon);
            let clean = simulate_nonlinear(&exp.model.areas, &exp.system, &exp.plant, &dist, &AttackSpec::None)?;
            let attacked = simulate_nonlinear(&exp.model.areas, &exp.system, &exp.plant, &dist, &atk)?;
            let r_clean = ResidualState::run(design, l, &clean.y)?;
            let r_atk = ResidualState::run(design, l, &attacked.y)?;
            let s_clean = detector.evaluate(&r_clean, &clean.t, warm_up)?;
            let s_atk = detector.evaluate(&r_atk, &attacked.t, warm_up)?;
            if let Some(d) = &dir {
                write_residual_csv(d.join(format!("clean_{i:02}.csv")), &clean.t, &r_clean, &s_clean)?;
                write_residual_csv(d.join(format!("attack_{i:02}.csv")), &attacked.t, &r_atk, &s_atk)?;
            }
            let latency = s_atk.first_alarm.filter(|&t| t + 1e-9 >= onset).map(|t| t - onset);
            Ok(RunResult {
                seed,
                detected: latency.is_some(),
                latency,
                clean: s_clean,
                attacked: s_atk,
            })
        })
        .collect();
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let mu = match &exp.cfg.attack {
        AttackModel::Multivariate { .. } => Some(steady_state_margin(design, &exp.stacked, &exp.cfg.attack)?),
        AttackModel::Univariate { .. } => None,
    };
    let report = TestReport {
        layout: LAYOUT_VERSION,
        mode: design.mode,
        threshold: detector.threshold(),
        tau_star: detector.tau_star,
        attack: f.iter().copied().collect(),
        alpha: alpha.map(|a| a.iter().copied().collect()),
        steady_state_margin: mu,
        false_alarms: runs.iter().filter(|r| r.clean.alarmed()).count(),
        detections: runs.iter().filter(|r| r.detected).count(),
        runs,
    };
    if let Some(d) = &dir {
        write_json(&d.join("report.json"), &report)?;
    }
    Ok(report)
}

pub fn cmd_test(exp: &Experiment, out: &Path) -> Result<TestReport> {
    let artifact = FilterArtifact::load(out.join("design/filter.json"), &exp.hash, &exp.stacked)?;
    let detector: Detector = read_json(&out.join("design/detector.json"))?;
    evaluate(exp, &artifact, &detector, Some(out))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunAllReport {
    pub layout: u32,
    pub name: String,
    pub seed: u64,
    pub mode: DesignMode,
    pub pretrain: Option<PretrainReport>,
    pub objective: f64,
    pub threshold: f64,
    pub false_alarms: usize,
    pub detections: usize,
    pub runs: usize,
    pub steady_state_margin: Option<f64>,
}

pub fn run_all(exp: &Experiment, out: &Path) -> Result<RunAllReport> {
    exp.write_config(out)?;
    let pretrain = if exp.is_multivariate() { Some(cmd_pretrain(exp, out)?) } else { None };
    let bundle = match exp.cfg.design.mode {
        DesignMode::DataAssisted => Some(cmd_train(exp, out)?),
        DesignMode::PureModel => None,
    };
    let outcome = cmd_design(exp, bundle.as_ref(), out)?;
    let test = cmd_test(exp, out)?;
    let report = RunAllReport {
        layout: LAYOUT_VERSION,
        name: exp.cfg.name.clone(),
        seed: exp.cfg.seed,
        mode: exp.cfg.design.mode,
        pretrain,
        objective: outcome.artifact.design.objective,
        threshold: test.threshold,
        false_alarms: test.false_alarms,
        detections: test.detections,
        runs: test.runs.len(),
        steady_state_margin: test.steady_state_margin,
    };
    write_json(&out.join("report.json"), &report)?;
    Ok(report)
}
