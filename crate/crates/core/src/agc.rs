//! Abstract linear model of a multi-area power system under automatic
//! generation control (AGC), including the false-data-injection channels.
//!
//! Per-area state ordering (frozen, filter coefficients depend on it):
//!
//! ```text
//! [ΔP_tie,ij for each neighbour j, Δω_i, ΔP_m,ig for each generator g, ΔP_agc,i]
//! ```
//!
//! Per-area output ordering: every state in the order above, then the
//! aggregate tie flow `Σ_j ΔP_tie,ij` (only when the area has neighbours),
//! then the aggregate mechanical power `Σ_g ΔP_m,ig`.
//!
//! Area identifiers in configuration files are 1-based.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::lti::{LinearModel, TimeDomain};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Generator {
    /// Governor-turbine time constant `T_ch` (s).
    pub t_ch: f64,
    /// Droop `S` (p.u.).
    pub droop: f64,
    /// AGC participation factor `φ`.
    pub participation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Neighbor {
    /// 1-based id of the connected area.
    pub area: usize,
    /// Synchronizing coefficient `T_ij`.
    pub sync_coeff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AreaParams {
    #[serde(default)]
    pub name: String,
    /// Inertia constant `H` (s).
    pub inertia: f64,
    /// Damping `D` (p.u.).
    pub damping: f64,
    /// Frequency bias `β` (p.u.).
    pub freq_bias: f64,
    /// AGC integral gain `K_I` (1/s).
    pub integral_gain: f64,
    pub generators: Vec<Generator>,
    #[serde(default)]
    pub neighbors: Vec<Neighbor>,
}

impl AreaParams {
    pub fn validate(&self) -> Result<()> {
        let who = if self.name.is_empty() { "area" } else { &self.name };
        let positive = |what: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidInput(format!("{who}: {what} must be positive, got {v}")))
            }
        };
        positive("inertia", self.inertia)?;
        if !(self.damping >= 0.0 && self.integral_gain >= 0.0) {
            return Err(Error::InvalidInput(format!("{who}: damping and integral gain must be >= 0")));
        }
        if !self.freq_bias.is_finite() {
            return Err(Error::InvalidInput(format!("{who}: frequency bias must be finite")));
        }
        if self.generators.is_empty() {
            return Err(Error::InvalidInput(format!("{who}: needs at least one generator")));
        }
        for g in &self.generators {
            positive("governor time constant", g.t_ch)?;
            positive("droop", g.droop)?;
        }
        let phi: f64 = self.generators.iter().map(|g| g.participation).sum();
        if (phi - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!("{who}: participation factors sum to {phi}, not 1")));
        }
        for nb in &self.neighbors {
            positive("synchronizing coefficient", nb.sync_coeff)?;
        }
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        self.neighbors.len() + self.generators.len() + 2
    }

    pub fn n_outputs(&self) -> usize {
        self.n_states() + usize::from(!self.neighbors.is_empty()) + 1
    }

    pub fn freq_index(&self) -> usize {
        self.neighbors.len()
    }

    pub fn pm_index(&self, g: usize) -> usize {
        self.neighbors.len() + 1 + g
    }

    pub fn agc_index(&self) -> usize {
        self.neighbors.len() + 1 + self.generators.len()
    }

    /// Output row of the aggregate tie flow, if the area has neighbours.
    pub fn tie_total_output(&self) -> Option<usize> {
        (!self.neighbors.is_empty()).then(|| self.n_states())
    }
}

/// Measured quantity targeted by an injection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "signal", rename_all = "snake_case")]
pub enum AttackSignal {
    /// Tie flow towards the given (1-based) neighbour area.
    TieFlow { to: usize },
    /// Aggregate tie flow of the area.
    TieTotal,
    /// Area frequency deviation.
    Frequency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackChannel {
    /// 1-based area id.
    pub area: usize,
    #[serde(flatten)]
    pub signal: AttackSignal,
    /// Gain from the injected bias into the AGC integrator (`B_f` entry is
    /// `-gain`). Defaults to `K_I` for tie flows, `K_I·β` for the
    /// frequency, and `0` for the aggregate tie flow.
    #[serde(default)]
    pub ace_gain: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackTopology {
    #[serde(default)]
    pub channels: Vec<AttackChannel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub areas: Vec<AreaParams>,
}

/// Resolved channel: where the bias lands in the assembled model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResolvedChannel {
    pub area: usize,
    pub output_row: usize,
    pub agc_state: usize,
    pub ace_gain: f64,
}

/// Global index bookkeeping for an assembled multi-area model.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub state_offsets: Vec<usize>,
    pub output_offsets: Vec<usize>,
    pub n_x: usize,
    pub n_y: usize,
    pub output_names: Vec<String>,
    pub channels: Vec<ResolvedChannel>,
}

#[derive(Debug, Clone)]
pub struct AgcSystem {
    pub model: LinearModel,
    pub layout: Layout,
}

/// Per-area blocks `A_ii`, `B_id`, `C_i` with `T_ij` taken from the area's
/// own neighbour list.
pub fn build_area(params: &AreaParams) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    params.validate()?;
    let n = params.n_states();
    let nb = params.neighbors.len();
    let w = params.freq_index();
    let agc = params.agc_index();
    let two_h = 2.0 * params.inertia;

    let mut a = DMatrix::zeros(n, n);
    for (j, neighbor) in params.neighbors.iter().enumerate() {
        a[(j, w)] = neighbor.sync_coeff;
        a[(w, j)] = -1.0 / two_h;
        a[(agc, j)] = -params.integral_gain;
    }
    a[(w, w)] = -params.damping / two_h;
    for (g, gen) in params.generators.iter().enumerate() {
        let m = params.pm_index(g);
        a[(w, m)] = 1.0 / two_h;
        a[(m, w)] = -1.0 / (gen.t_ch * gen.droop);
        a[(m, m)] = -1.0 / gen.t_ch;
        a[(m, agc)] = gen.participation / gen.t_ch;
    }
    a[(agc, w)] = -params.integral_gain * params.freq_bias;

    let mut b_d = DMatrix::zeros(n, 1);
    b_d[(w, 0)] = -1.0 / two_h;

    let mut c = DMatrix::zeros(params.n_outputs(), n);
    for i in 0..n {
        c[(i, i)] = 1.0;
    }
    let mut row = n;
    if nb > 0 {
        for j in 0..nb {
            c[(row, j)] = 1.0;
        }
        row += 1;
    }
    for g in 0..params.generators.len() {
        c[(row, params.pm_index(g))] = 1.0;
    }
    Ok((a, b_d, c))
}

pub fn corrupted_ace(freq_bias: f64, freq_dev: f64, tie_flows: &[f64], injection: f64) -> f64 {
    freq_bias * freq_dev + (tie_flows.iter().sum::<f64>() + injection)
}

fn check_topology(areas: &[AreaParams]) -> Result<()> {
    for (i, area) in areas.iter().enumerate() {
        let id = i + 1;
        for nb in &area.neighbors {
            if nb.area == 0 || nb.area > areas.len() || nb.area == id {
                return Err(Error::InvalidInput(format!("area {id}: invalid neighbour id {}", nb.area)));
            }
            if !areas[nb.area - 1].neighbors.iter().any(|back| back.area == id) {
                return Err(Error::InvalidInput(format!(
                    "asymmetric topology: area {id} lists {} but not vice versa",
                    nb.area
                )));
            }
        }
        let mut ids: Vec<_> = area.neighbors.iter().map(|n| n.area).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != area.neighbors.len() {
            return Err(Error::InvalidInput(format!("area {id}: duplicate neighbour")));
        }
    }
    Ok(())
}

pub fn layout(areas: &[AreaParams], topology: &AttackTopology) -> Result<Layout> {
    let mut state_offsets = Vec::with_capacity(areas.len());
    let mut output_offsets = Vec::with_capacity(areas.len());
    let (mut n_x, mut n_y) = (0, 0);
    let mut output_names = Vec::new();
    for (i, area) in areas.iter().enumerate() {
        state_offsets.push(n_x);
        output_offsets.push(n_y);
        n_x += area.n_states();
        n_y += area.n_outputs();
        let id = i + 1;
        for nb in &area.neighbors {
            output_names.push(format!("a{id}.tie{id}{}", nb.area));
        }
        output_names.push(format!("a{id}.freq"));
        for g in 0..area.generators.len() {
            output_names.push(format!("a{id}.pm{}", g + 1));
        }
        output_names.push(format!("a{id}.agc"));
        if !area.neighbors.is_empty() {
            output_names.push(format!("a{id}.tie_total"));
        }
        output_names.push(format!("a{id}.pm_total"));
    }

    let mut channels = Vec::with_capacity(topology.channels.len());
    for ch in &topology.channels {
        let area = ch
            .area
            .checked_sub(1)
            .and_then(|i| areas.get(i))
            .ok_or_else(|| Error::InvalidInput(format!("attack channel on unknown area {}", ch.area)))?;
        let a = ch.area - 1;
        let (local_row, default_gain) = match ch.signal {
            AttackSignal::TieFlow { to } => {
                let j = area.neighbors.iter().position(|n| n.area == to).ok_or_else(|| {
                    Error::InvalidInput(format!("area {} has no tie line to area {to}", ch.area))
                })?;
                (j, area.integral_gain)
            }
            AttackSignal::TieTotal => (
                area.tie_total_output().ok_or_else(|| {
                    Error::InvalidInput(format!("area {} has no tie lines", ch.area))
                })?,
                0.0,
            ),
            AttackSignal::Frequency => (area.freq_index(), area.integral_gain * area.freq_bias),
        };
        channels.push(ResolvedChannel {
            area: a,
            output_row: output_offsets[a] + local_row,
            agc_state: state_offsets[a] + area.agc_index(),
            ace_gain: ch.ace_gain.unwrap_or(default_gain),
        });
    }

    Ok(Layout {
        state_offsets,
        output_offsets,
        n_x,
        n_y,
        output_names,
        channels,
    })
}

/// Assembles the continuous-time multi-area model. Coupling blocks `A_ij`
/// carry `-T_ij` in the row of tie flow `ij`, column of `Δω_j`.
pub fn assemble_multiarea(areas: &[AreaParams], topology: &AttackTopology) -> Result<AgcSystem> {
    if areas.is_empty() {
        return Err(Error::InvalidInput("model needs at least one area".into()));
    }
    for a in areas {
        a.validate()?;
    }
    check_topology(areas)?;
    let lay = layout(areas, topology)?;
    let n_areas = areas.len();
    let n_f = lay.channels.len();

    let mut a_c = DMatrix::zeros(lay.n_x, lay.n_x);
    let mut b_d = DMatrix::zeros(lay.n_x, n_areas);
    let mut c = DMatrix::zeros(lay.n_y, lay.n_x);
    for (i, area) in areas.iter().enumerate() {
        let (aii, bid, ci) = build_area(area)?;
        let (xo, yo) = (lay.state_offsets[i], lay.output_offsets[i]);
        a_c.view_mut((xo, xo), aii.shape()).copy_from(&aii);
        b_d.view_mut((xo, i), bid.shape()).copy_from(&bid);
        c.view_mut((yo, xo), ci.shape()).copy_from(&ci);
        for (j, nb) in area.neighbors.iter().enumerate() {
            let other = nb.area - 1;
            let w_other = lay.state_offsets[other] + areas[other].freq_index();
            a_c[(xo + j, w_other)] = -nb.sync_coeff;
        }
    }

    let mut b_f = DMatrix::zeros(lay.n_x, n_f);
    let mut d_f = DMatrix::zeros(lay.n_y, n_f);
    for (k, ch) in lay.channels.iter().enumerate() {
        d_f[(ch.output_row, k)] = 1.0;
        b_f[(ch.agc_state, k)] = -ch.ace_gain;
    }

    let model = LinearModel::new(a_c, b_d, b_f, c, d_f, TimeDomain::Continuous)?;
    Ok(AgcSystem { model, layout: lay })
}

impl ModelConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ModelConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(&path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("model config serializes")
    }

    /// Validates parameters and requires the assembled closed loop to be
    /// asymptotically stable.
    pub fn check(&self) -> Result<()> {
        let sys = assemble_multiarea(&self.areas, &AttackTopology::default())
            .map_err(|e| Error::Config(e.to_string()))?;
        let abscissa = sys.model.stability_margin();
        if abscissa >= 0.0 {
            return Err(Error::Config(format!(
                "closed-loop model is not stable (max real eigenvalue part {abscissa:.3e})"
            )));
        }
        Ok(())
    }

    pub fn assemble(&self, topology: &AttackTopology) -> Result<AgcSystem> {
        assemble_multiarea(&self.areas, topology)
    }

    /// Three fully interconnected areas with 2, 3 and 2 AGC generators
    /// (19 states, 25 outputs). Typical textbook AGC values; these are
    /// configuration, not measured data.
    pub fn three_area_default() -> Self {
        let gen = |t_ch: f64, participation: f64| Generator { t_ch, droop: 0.05, participation };
        let nb = |area: usize| Neighbor { area, sync_coeff: 0.545 };
        let area = |name: &str, generators: Vec<Generator>, neighbors: Vec<Neighbor>| AreaParams {
            name: name.into(),
            inertia: 5.0,
            damping: 1.0,
            freq_bias: 20.0,
            integral_gain: 0.3,
            generators,
            neighbors,
        };
        ModelConfig {
            areas: vec![
                area("area1", vec![gen(0.3, 0.5), gen(0.4, 0.5)], vec![nb(2), nb(3)]),
                area(
                    "area2",
                    vec![gen(0.35, 0.4), gen(0.45, 0.3), gen(0.5, 0.3)],
                    vec![nb(1), nb(3)],
                ),
                area("area3", vec![gen(0.3, 0.6), gen(0.5, 0.4)], vec![nb(1), nb(2)]),
            ],
        }
    }
}

/// SHA-256 over the canonical serialisation of a model and its attack
/// topology; filter artifacts record it to detect stale designs.
pub fn model_hash(model: &ModelConfig, topology: &AttackTopology) -> String {
    let canonical = serde_json::to_string(&(model, topology)).expect("serializable");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}
