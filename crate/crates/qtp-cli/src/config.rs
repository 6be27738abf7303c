//! Scenario configuration: JSON schema, validation with field-path error
//! messages, and the canonical scenario hash.
//!
//! All physical quantities are in natural units with the field mass as the
//! unit scale (mass = 1 sets the length/time unit). The schema is
//! documented in docs/scenario-schema.md and available as machine-readable
//! JSON Schema via `qtp schema`.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use qtp_core::detector::{DetectorModel, PointerSpec};
use qtp_core::fftgrid::GridSpec;
use qtp_core::field::{FieldSpec, WavePacket};
use qtp_core::fock::LatticeModel;
use qtp_core::geometry::{Dim, FourVector, SamplingFunction};
use qtp_core::grid::OutcomeSpace;
use qtp_core::{FieldModel, FieldState};

pub const SCHEMA_VERSION: u32 = 1;

/// Configuration / schema error: maps to exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    pub field: FieldConfig,
    pub state: StateConfig,
    pub detectors: Vec<DetectorConfig>,
    pub pipeline: Vec<Stage>,
    #[serde(default)]
    pub numerics: Numerics,
    #[serde(default)]
    pub outputs: Outputs,
    /// Required when the pipeline contains "wightman".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wightman: Option<WightmanConfig>,
    /// Required when the pipeline contains "oracle".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleConfig>,
    /// Required when the pipeline contains "limits".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limits: Option<LimitsConfig>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase", deny_unknown_fields)]
pub enum FieldConfig {
    /// Periodic momentum lattice; exactly matches the truncated Fock oracle.
    Lattice { dim: usize, mass: f64, box_length: f64, max_mode: i32 },
    /// Continuum field with an i-epsilon regulator in the closed forms.
    Continuum { dim: usize, mass: f64, epsilon: f64 },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum StateConfig {
    Vacuum,
    Particles { packets: Vec<PacketConfig> },
    Coherent { packet: PacketConfig, amplitude: [f64; 2] },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PacketConfig {
    /// Center momentum, one component per spatial dimension.
    pub momentum: Vec<f64>,
    /// Momentum-space Gaussian width.
    pub width: f64,
    /// Spatial center; defaults to the origin.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorConfig {
    /// Reference spacetime point, time component first.
    pub position: Vec<f64>,
    pub gap: f64,
    pub sigma_e: f64,
    pub sigma_p: f64,
    pub coupling: f64,
    pub sampling: SamplingConfig,
    /// Strictly increasing momentum bin edges; omit for a single bin.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pointer_bins: Option<Vec<f64>>,
    /// Outcome window grid over spacetime, time axis first.
    pub window: GridConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingConfig {
    pub delta_t: f64,
    pub delta_x: f64,
    /// Defaults to the detector position.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub origin: Vec<f64>,
    pub step: Vec<f64>,
    pub shape: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Wightman,
    Detect,
    Joint,
    Diagnostics,
    Oracle,
    Limits,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Numerics {
    /// Worker threads; the --threads flag takes precedence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    /// Base relative tolerance for dual-route and golden comparisons.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    /// Detection mass below which conditioning is refused.
    #[serde(default = "default_min_mass")]
    pub min_mass: f64,
    /// Classicality-defect threshold for the diagnostics verdict.
    #[serde(default = "default_defect_threshold")]
    pub defect_threshold: f64,
    /// Shared relative-coordinate grid: half extents and point counts per
    /// axis. Omit to let each evaluation plan its own grid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rel_grid: Option<RelGridConfig>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelGridConfig {
    pub half: Vec<f64>,
    pub points: Vec<usize>,
}

fn default_tolerance() -> f64 {
    1e-6
}
fn default_min_mass() -> f64 {
    1e-12
}
fn default_defect_threshold() -> f64 {
    1e-6
}

impl Default for Numerics {
    fn default() -> Self {
        Numerics {
            threads: None,
            tolerance: default_tolerance(),
            min_mass: default_min_mass(),
            defect_threshold: default_defect_threshold(),
            rel_grid: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridFormat {
    Binary,
    Csv,
    Both,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    #[serde(default = "default_grid_format")]
    pub grids: GridFormat,
    #[serde(default = "default_true")]
    pub reports: bool,
}

fn default_grid_format() -> GridFormat {
    GridFormat::Both
}
fn default_true() -> bool {
    true
}

impl Default for Outputs {
    fn default() -> Self {
        Outputs { grids: default_grid_format(), reports: default_true() }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WightmanConfig {
    /// First argument of the two-point function, time component first.
    pub base: Vec<f64>,
    /// Grid of second arguments.
    pub grid: GridConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    /// Fock occupation cutoff per configuration.
    pub cutoff: u8,
    /// Point pairs [a, b]; each check compares the contraction engine's
    /// G(a, b) against the truncated-Fock matrix element.
    pub pairs: Vec<[Vec<f64>; 2]>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitsConfig {
    /// Time slice for the broadband intensity-law check.
    #[serde(default = "default_limits_time")]
    pub time: f64,
    /// Spatial sample positions along the first axis.
    pub positions: Vec<f64>,
    /// Relative tolerance on the intensity-law deviation.
    #[serde(default = "default_limits_tolerance")]
    pub tolerance: f64,
}

fn default_limits_time() -> f64 {
    0.3
}
fn default_limits_tolerance() -> f64 {
    0.02
}

/// Resolved scenario: core-library objects ready for the pipeline.
pub struct Resolved {
    pub model: FieldModel,
    pub state: FieldState,
    pub detectors: Vec<DetectorModel>,
    pub spaces: Vec<OutcomeSpace>,
    pub rel_grid: Option<GridSpec>,
}

fn dim_of(d: usize, path: &str) -> Result<Dim, ConfigError> {
    match d {
        2 => Ok(Dim::Two),
        4 => Ok(Dim::Four),
        _ => Err(ConfigError(format!("{path}: dim must be 2 or 4, got {d}"))),
    }
}

fn four_vector(c: &[f64], dim: Dim, path: &str) -> Result<FourVector, ConfigError> {
    if c.len() != dim.d() {
        return Err(ConfigError(format!(
            "{path}: expected {} components (time first), got {}",
            dim.d(),
            c.len()
        )));
    }
    FourVector::from_components(c).map_err(|e| ConfigError(format!("{path}: {e}")))
}

/// Public wrapper for component lists appearing outside detector blocks.
pub fn four_components(c: &[f64], dim: Dim, path: &str) -> Result<FourVector, ConfigError> {
    four_vector(c, dim, path)
}

fn packet(p: &PacketConfig, dim: Dim, path: &str) -> Result<WavePacket, ConfigError> {
    if p.momentum.len() != dim.d() - 1 {
        return Err(ConfigError(format!(
            "{path}.momentum: expected {} spatial components, got {}",
            dim.d() - 1,
            p.momentum.len()
        )));
    }
    let mut wp = WavePacket::new(p.momentum.clone(), p.width)
        .map_err(|e| ConfigError(format!("{path}: {e}")))?;
    if let Some(pos) = &p.position {
        if pos.len() != dim.d() - 1 {
            return Err(ConfigError(format!(
                "{path}.position: expected {} spatial components, got {}",
                dim.d() - 1,
                pos.len()
            )));
        }
        wp = wp.at_position(pos.clone());
    }
    Ok(wp)
}

pub fn grid_spec(g: &GridConfig, ndim: usize, path: &str) -> Result<GridSpec, ConfigError> {
    if g.origin.len() != ndim || g.step.len() != ndim || g.shape.len() != ndim {
        return Err(ConfigError(format!(
            "{path}: origin/step/shape must each have {ndim} entries"
        )));
    }
    if g.step.iter().any(|&s| !(s > 0.0)) || g.shape.iter().any(|&n| n == 0) {
        return Err(ConfigError(format!("{path}: steps must be > 0 and shape entries >= 1")));
    }
    Ok(GridSpec { origin: g.origin.clone(), step: g.step.clone(), shape: g.shape.clone() })
}

impl Scenario {
    /// Parse and schema-validate a scenario, reporting the JSON field path
    /// on failure.
    pub fn from_json(text: &str) -> Result<Scenario, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let scenario: Scenario = serde_path_to_error::deserialize(de)
            .map_err(|e| ConfigError(format!("at {}: {}", e.path(), e.inner())))?;
        if scenario.schema_version != SCHEMA_VERSION {
            return Err(ConfigError(format!(
                "schema_version: expected {SCHEMA_VERSION}, got {}",
                scenario.schema_version
            )));
        }
        scenario.check_cross_references()?;
        Ok(scenario)
    }

    fn check_cross_references(&self) -> Result<(), ConfigError> {
        if self.pipeline.is_empty() {
            return Err(ConfigError("pipeline: at least one stage required".into()));
        }
        let needs_detectors = |s: Stage| {
            matches!(s, Stage::Detect | Stage::Joint | Stage::Diagnostics | Stage::Limits)
        };
        if self.pipeline.iter().any(|&s| needs_detectors(s)) && self.detectors.is_empty() {
            return Err(ConfigError(
                "detectors: detect/joint/diagnostics/limits stages need at least one detector"
                    .into(),
            ));
        }
        let two_det = |s: Stage| matches!(s, Stage::Joint | Stage::Diagnostics);
        if self.pipeline.iter().any(|&s| two_det(s)) && self.detectors.len() < 2 {
            return Err(ConfigError(
                "detectors: joint/diagnostics stages need at least two detectors".into(),
            ));
        }
        if self.pipeline.contains(&Stage::Wightman) && self.wightman.is_none() {
            return Err(ConfigError("wightman: section required by the wightman stage".into()));
        }
        if self.pipeline.contains(&Stage::Oracle) {
            match &self.oracle {
                None => {
                    return Err(ConfigError("oracle: section required by the oracle stage".into()))
                }
                Some(o) if o.pairs.is_empty() => {
                    return Err(ConfigError("oracle.pairs: at least one point pair required".into()))
                }
                Some(o) if !matches!(self.field, FieldConfig::Lattice { .. }) => {
                    let _ = o;
                    return Err(ConfigError(
                        "oracle: the truncated-Fock oracle requires field.model = lattice".into(),
                    ));
                }
                _ => {}
            }
        }
        if self.pipeline.contains(&Stage::Limits) {
            match &self.limits {
                None => {
                    return Err(ConfigError("limits: section required by the limits stage".into()))
                }
                Some(l) if l.positions.is_empty() => {
                    return Err(ConfigError("limits.positions: at least one position required".into()))
                }
                _ => {}
            }
            if !matches!(self.field, FieldConfig::Lattice { .. }) {
                return Err(ConfigError(
                    "limits: the intensity-law check requires field.model = lattice".into(),
                ));
            }
            if !matches!(self.state, StateConfig::Particles { .. }) {
                return Err(ConfigError(
                    "limits: the intensity-law check requires state.type = particles".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> Result<Dim, ConfigError> {
        match &self.field {
            FieldConfig::Lattice { dim, .. } => dim_of(*dim, "field.dim"),
            FieldConfig::Continuum { dim, .. } => dim_of(*dim, "field.dim"),
        }
    }

    /// Resolve the scenario into core-library objects.
    pub fn resolve(&self) -> Result<Resolved, ConfigError> {
        let dim = self.dim()?;
        let model = match &self.field {
            FieldConfig::Lattice { mass, box_length, max_mode, .. } => {
                let lat = LatticeModel::new(dim, *mass, *box_length, *max_mode)
                    .map_err(|e| ConfigError(format!("field: {e}")))?;
                FieldModel::Lattice(lat)
            }
            FieldConfig::Continuum { mass, epsilon, .. } => {
                let spec = FieldSpec::new(dim, *mass)
                    .map_err(|e| ConfigError(format!("field: {e}")))?;
                FieldModel::continuum(spec, *epsilon)
            }
        };
        let state = match &self.state {
            StateConfig::Vacuum => FieldState::Vacuum,
            StateConfig::Particles { packets } => {
                let ps = packets
                    .iter()
                    .enumerate()
                    .map(|(i, p)| packet(p, dim, &format!("state.packets[{i}]")))
                    .collect::<Result<Vec<_>, _>>()?;
                if ps.is_empty() {
                    return Err(ConfigError("state.packets: at least one packet required".into()));
                }
                FieldState::Particles(ps)
            }
            StateConfig::Coherent { packet: p, amplitude } => FieldState::Coherent {
                packet: packet(p, dim, "state.packet")?,
                amplitude: num_complex::Complex64::new(amplitude[0], amplitude[1]),
            },
        };
        state.validate().map_err(|e| ConfigError(format!("state: {e}")))?;

        let mut detectors = Vec::new();
        let mut spaces = Vec::new();
        for (i, d) in self.detectors.iter().enumerate() {
            let path = format!("detectors[{i}]");
            let ref_point = four_vector(&d.position, dim, &format!("{path}.position"))?;
            let center = match &d.sampling.center {
                Some(c) => four_vector(c, dim, &format!("{path}.sampling.center"))?,
                None => ref_point,
            };
            let sampling = SamplingFunction::new(d.sampling.delta_t, d.sampling.delta_x, center)
                .map_err(|e| ConfigError(format!("{path}.sampling: {e}")))?;
            let pointer = match &d.pointer_bins {
                None => PointerSpec::None,
                Some(edges) => PointerSpec::MomentumBins(edges.clone()),
            };
            let det = DetectorModel {
                ref_point,
                gap: d.gap,
                sigma_e: d.sigma_e,
                sigma_p: d.sigma_p,
                coupling: d.coupling,
                sampling,
                pointer,
            };
            det.validate().map_err(|e| ConfigError(format!("{path}: {e}")))?;
            let grid = grid_spec(&d.window, dim.d(), &format!("{path}.window"))?;
            let space = OutcomeSpace::new(grid, det.pointer.n_bins())
                .map_err(|e| ConfigError(format!("{path}.window: {e}")))?;
            detectors.push(det);
            spaces.push(space);
        }

        let rel_grid = match &self.numerics.rel_grid {
            None => None,
            Some(r) => {
                if r.half.len() != dim.d() || r.points.len() != dim.d() {
                    return Err(ConfigError(format!(
                        "numerics.rel_grid: half/points must each have {} entries",
                        dim.d()
                    )));
                }
                Some(
                    GridSpec::symmetric(&r.half, &r.points)
                        .map_err(|e| ConfigError(format!("numerics.rel_grid: {e}")))?,
                )
            }
        };

        Ok(Resolved { model, state, detectors, spaces, rel_grid })
    }

    /// Spacetime axis names for this scenario's dimension.
    pub fn axis_names(&self) -> Vec<&'static str> {
        match self.dim() {
            Ok(Dim::Four) => vec!["t", "x", "y", "z"],
            _ => vec!["t", "x"],
        }
    }
}

/// Canonical form: JSON round-tripped through a sorted-key value tree with
/// no insignificant whitespace. Two configs that parse to the same value
/// tree hash identically.
pub fn canonicalize(text: &str) -> Result<String, ConfigError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| ConfigError(format!("invalid JSON: {e}")))?;
    serde_json::to_string(&value).map_err(|e| ConfigError(format!("canonicalization: {e}")))
}

/// Scenario hash: SHA-256 of the canonicalized config, hex-encoded.
pub fn scenario_hash(text: &str) -> Result<String, ConfigError> {
    let canon = canonicalize(text)?;
    let mut hasher = Sha256::new();
    hasher.update(canon.as_bytes());
    Ok(format!("{:x}", hasher.finalize()))
}
