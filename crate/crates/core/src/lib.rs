//! Data-assisted, model-based synthesis of anomaly diagnosis filters.
//!
//! The abstract linear model contributes the feasible sets of the synthesis
//! programs, while simulation data from a higher-fidelity (nonlinear) plant
//! contributes the quadratic objective that penalises the residual energy
//! caused by model mismatch. The crate covers the whole chain:
//!
//! - [`lti`]: shift-operator polynomial matrices, ZOH discretization, the
//!   difference-algebraic form `H(q)x̄ + L(q)y + F(q)f = 0` and its stacked
//!   block matrices.
//! - [`agc`]: the multi-area automatic generation control model.
//! - [`plant`]: nonlinear and linear simulators producing sampled outputs.
//! - [`solver`]: dense LP (simplex) and convex QP (active set) solvers with
//!   KKT certificates.
//! - [`design`]: mismatch signatures, quadratic forms, univariate and
//!   multivariate filter synthesis, filter artifacts.
//! - [`runtime`]: causal residual generation, windowed energy, thresholds.
//! - [`experiment`]: the pretrain / train / design / test pipeline.

pub mod agc;
pub mod design;
pub mod error;
pub mod experiment;
pub mod lti;
pub mod matio;
pub mod plant;
pub mod runtime;
pub mod solver;

pub use error::{Error, Result};

pub use experiment::{Experiment, ExperimentConfig};
pub use agc::{AgcSystem, AttackSignal, AreaParams, AttackChannel, AttackTopology, Generator, ModelConfig, Neighbor};
pub use design::{
    Branch, FilterKind,
    AttackModel, DesignMode, DesignOptions, FilterArtifact, FilterDesign, MismatchData,
    MultivariateBranch, PretrainReport,
};
pub use lti::{DaeSystem, LinearModel, PolyMatrix, StackedSystem, TimeDomain};
pub use plant::{AttackSpec, DisturbanceKind, DisturbanceSpec, NonlinearPlantConfig, SampledTrajectory};
pub use runtime::{Detector, DetectionSummary, ResidualState};
pub use solver::{LpProblem, QpProblem, Solution, SolveStatus};
