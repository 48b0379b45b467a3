//! Strict JSON scenario configuration.
//!
//! Unknown keys are found by deserializing, re-serializing the typed value
//! and comparing the two key trees, so every unknown key is reported at once,
//! including keys inside tagged variants.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::cellsolve::{validate_ladder, DEFAULT_LADDER};
use crate::epsbench::{inverse_eps, MIN_NODES_PER_CELL};
use crate::error::{Error, Result};
use crate::macroflow::{ForcingSpec, MacroVariant};
use crate::microgeom::{DepthSpec, Microstructure, RadiusLaw};

pub const DEFAULT_N: usize = 256;
pub const DEFAULT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    Cell,
    Tensor,
    Coord,
    MicroFlow,
    MacroFlow,
    EpsStudy,
}

impl ScenarioKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ScenarioKind::Cell => "cell",
            ScenarioKind::Tensor => "tensor",
            ScenarioKind::Coord => "coord",
            ScenarioKind::MicroFlow => "micro-flow",
            ScenarioKind::MacroFlow => "macro-flow",
            ScenarioKind::EpsStudy => "eps-study",
        }
    }

    /// Configuration section owned by the kind, if any.
    fn section(&self) -> Option<&'static str> {
        match self {
            ScenarioKind::Cell | ScenarioKind::Tensor => None,
            ScenarioKind::Coord => Some("coord"),
            ScenarioKind::MicroFlow => Some("micro_flow"),
            ScenarioKind::MacroFlow => Some("macro_flow"),
            ScenarioKind::EpsStudy => Some("eps_study"),
        }
    }
}

/// Stiff inclusion geometry: explicit, a centered disk, or sampled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "kebab-case")]
pub enum GeometryConfig {
    Explicit {
        microstructure: Microstructure,
    },
    Disk {
        fraction: f64,
        #[serde(default = "default_hardcore")]
        hardcore: f64,
    },
    Random {
        fraction: f64,
        hardcore: f64,
        radius: RadiusLaw,
    },
}

fn default_hardcore() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordConfig {
    #[serde(default = "default_erosion")]
    pub erosion_cells: f64,
    #[serde(default = "default_directions")]
    pub directions: usize,
}

fn default_erosion() -> f64 {
    crate::harmcoord::DEFAULT_EROSION_CELLS
}

fn default_directions() -> usize {
    16
}

impl Default for CoordConfig {
    fn default() -> Self {
        Self {
            erosion_cells: default_erosion(),
            directions: default_directions(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicroFlowConfig {
    /// Directions `e`; normalized on use.
    #[serde(default = "default_micro_directions")]
    pub directions: Vec<[f64; 2]>,
    #[serde(default = "default_micro_t")]
    pub t_end: f64,
    /// Time step; the CFL bound is used when absent.
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default = "default_trajectories")]
    pub trajectories: usize,
    /// Minimum distance of the start points to the inclusions.
    #[serde(default = "default_margin")]
    pub margin: f64,
}

fn default_micro_directions() -> Vec<[f64; 2]> {
    let phi = 0.5 * (1.0 + 5f64.sqrt());
    vec![[1.0, phi], [1.0, 0.0]]
}

fn default_micro_t() -> f64 {
    1000.0
}

fn default_trajectories() -> usize {
    32
}

fn default_margin() -> f64 {
    0.02
}

impl Default for MicroFlowConfig {
    fn default() -> Self {
        Self {
            directions: default_micro_directions(),
            t_end: default_micro_t(),
            dt: None,
            trajectories: default_trajectories(),
            margin: default_margin(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroFlowConfig {
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default = "default_length")]
    pub length: f64,
    #[serde(default = "default_macro_t")]
    pub t_end: f64,
    /// Time step; half the CFL limit of the initial state when absent.
    #[serde(default)]
    pub dt: Option<f64>,
    /// Explicit `ā` (bypasses the cell problem).
    #[serde(default)]
    pub a_bar: Option<[[f64; 2]; 2]>,
    /// Transport divisor paired with an explicit `ā`.
    #[serde(default)]
    pub transport_divisor: Option<f64>,
    /// Variant of an explicit `ā` (default inclusions).
    #[serde(default)]
    pub variant: Option<MacroVariant>,
    /// State sidecar (`.json`) of a previous run to restart from.
    #[serde(default)]
    pub restart: Option<PathBuf>,
    /// Highest initial mode `|k|∞`.
    #[serde(default = "default_kmax")]
    pub kmax: u32,
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    #[serde(default)]
    pub forcing: ForcingSpec,
    #[serde(default = "default_every")]
    pub diagnostics_every: usize,
    /// Vorticity dumps every this many steps (0: none).
    #[serde(default)]
    pub dump_every: usize,
}

fn default_m() -> usize {
    256
}

fn default_length() -> f64 {
    2.0 * std::f64::consts::PI
}

fn default_macro_t() -> f64 {
    1.0
}

fn default_kmax() -> u32 {
    4
}

fn default_amplitude() -> f64 {
    1.0
}

fn default_every() -> usize {
    10
}

impl Default for MacroFlowConfig {
    fn default() -> Self {
        Self {
            m: default_m(),
            length: default_length(),
            t_end: default_macro_t(),
            dt: None,
            a_bar: None,
            transport_divisor: None,
            variant: None,
            restart: None,
            kmax: default_kmax(),
            amplitude: default_amplitude(),
            forcing: ForcingSpec::default(),
            diagnostics_every: default_every(),
            dump_every: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsStudyConfig {
    #[serde(default = "default_eps")]
    pub eps: Vec<f64>,
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default = "default_eps_t")]
    pub t_end: f64,
    #[serde(default = "default_eps_dt")]
    pub dt: f64,
    #[serde(default = "default_eps_kmax")]
    pub kmax: u32,
    #[serde(default = "default_eps_amplitude")]
    pub amplitude: f64,
}

fn default_eps() -> Vec<f64> {
    vec![0.25, 0.125, 0.0625]
}

fn default_eps_t() -> f64 {
    0.5
}

fn default_eps_dt() -> f64 {
    4e-3
}

fn default_eps_kmax() -> u32 {
    3
}

fn default_eps_amplitude() -> f64 {
    10.0
}

impl Default for EpsStudyConfig {
    fn default() -> Self {
        Self {
            eps: default_eps(),
            m: default_m(),
            t_end: default_eps_t(),
            dt: default_eps_dt(),
            kmax: default_eps_kmax(),
            amplitude: default_eps_amplitude(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub geometry: Option<GeometryConfig>,
    #[serde(default)]
    pub depth: Option<DepthSpec>,
    /// Cell-problem resolution.
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_ladder")]
    pub k_ladder: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub coord: CoordConfig,
    #[serde(default)]
    pub micro_flow: MicroFlowConfig,
    #[serde(default)]
    pub macro_flow: MacroFlowConfig,
    #[serde(default)]
    pub eps_study: EpsStudyConfig,
}

fn default_n() -> usize {
    DEFAULT_N
}

fn default_tol() -> f64 {
    DEFAULT_TOL
}

fn default_ladder() -> Vec<f64> {
    DEFAULT_LADDER.to_vec()
}

impl ScenarioConfig {
    /// Minimal configuration of a kind, all defaults.
    pub fn new(kind: ScenarioKind) -> Self {
        serde_json::from_value(serde_json::json!({ "kind": kind })).expect("defaults deserialize")
    }

    /// Canonical JSON with defaults filled in and the output directory
    /// removed; the input of the configuration hash.
    pub fn canonical_json(&self) -> String {
        let mut c = self.clone();
        c.output = None;
        serde_json::to_string(&c).expect("config serializes")
    }

    /// Every schema violation, empty when valid.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let kind = self.kind;
        if self.n < 16 || self.n % 2 != 0 || self.n > 8192 {
            v.push(format!(
                "n = {} must be an even grid size in [16, 8192]",
                self.n
            ));
        }
        if !(self.tol > 0.0 && self.tol <= 1e-2) {
            v.push(format!("tol = {} must lie in (0, 1e-2]", self.tol));
        }
        let needs_cell = !matches!(kind, ScenarioKind::MacroFlow | ScenarioKind::EpsStudy)
            || (kind == ScenarioKind::MacroFlow && self.macro_flow.a_bar.is_none());
        match (&self.geometry, &self.depth) {
            (Some(_), Some(_)) => v.push("geometry and depth are mutually exclusive".into()),
            (None, None) if needs_cell || kind == ScenarioKind::EpsStudy => {
                v.push(if kind == ScenarioKind::EpsStudy {
                    "eps-study needs a depth".into()
                } else {
                    format!("{} needs a geometry or a depth", kind.as_str())
                })
            }
            _ => {}
        }
        if let Some(g) = &self.geometry {
            geometry_violations(g, &mut v);
            if self.geometry.is_some() && needs_cell {
                if let Err(e) = validate_ladder(&self.k_ladder) {
                    v.push(format!("k_ladder: {e}"));
                }
            }
        }
        if let Some(d) = &self.depth {
            if let Err(e) = d.validate() {
                v.push(format!("depth: {e}"));
            }
        }
        match kind {
            ScenarioKind::Cell | ScenarioKind::Tensor => {}
            ScenarioKind::Coord => {
                let c = &self.coord;
                if !(c.erosion_cells >= 2.0) {
                    v.push(format!(
                        "coord.erosion_cells = {} must be at least 2",
                        c.erosion_cells
                    ));
                }
                if c.directions == 0 {
                    v.push("coord.directions must be positive".into());
                }
            }
            ScenarioKind::MicroFlow => {
                let c = &self.micro_flow;
                if c.directions.is_empty() {
                    v.push("micro_flow.directions must not be empty".into());
                }
                for (i, e) in c.directions.iter().enumerate() {
                    if !(e[0].is_finite() && e[1].is_finite() && e[0].hypot(e[1]) > 0.0) {
                        v.push(format!(
                            "micro_flow.directions[{i}] = {e:?} must be a nonzero vector"
                        ));
                    }
                }
                if !(c.t_end > 0.0 && c.t_end.is_finite()) {
                    v.push(format!("micro_flow.t_end = {} must be positive", c.t_end));
                }
                if c.dt.is_some_and(|dt| !(dt > 0.0 && dt.is_finite())) {
                    v.push(format!("micro_flow.dt = {:?} must be positive", c.dt));
                }
                if c.trajectories == 0 {
                    v.push("micro_flow.trajectories must be positive".into());
                }
                if !(c.margin >= 0.0 && c.margin < 0.5) {
                    v.push(format!(
                        "micro_flow.margin = {} must lie in [0, 0.5)",
                        c.margin
                    ));
                }
            }
            ScenarioKind::MacroFlow => {
                let c = &self.macro_flow;
                if c.m < 16 || c.m % 2 != 0 || c.m > 8192 {
                    v.push(format!(
                        "macro_flow.m = {} must be an even grid size in [16, 8192]",
                        c.m
                    ));
                }
                if !(c.length > 0.0 && c.length.is_finite()) {
                    v.push(format!("macro_flow.length = {} must be positive", c.length));
                }
                if !(c.t_end >= 0.0 && c.t_end.is_finite()) {
                    v.push(format!(
                        "macro_flow.t_end = {} must be nonnegative",
                        c.t_end
                    ));
                }
                if c.dt.is_some_and(|dt| !(dt > 0.0 && dt.is_finite())) {
                    v.push(format!("macro_flow.dt = {:?} must be positive", c.dt));
                }
                if c.kmax == 0 || 3 * c.kmax as usize > c.m {
                    v.push(format!("macro_flow.kmax = {} must lie in [1, m/3]", c.kmax));
                }
                if !c.amplitude.is_finite() {
                    v.push("macro_flow.amplitude must be finite".into());
                }
                match (c.a_bar, c.transport_divisor) {
                    (Some(_), None) => {
                        v.push("macro_flow.a_bar needs macro_flow.transport_divisor".into())
                    }
                    (None, Some(_)) => {
                        v.push("macro_flow.transport_divisor needs macro_flow.a_bar".into())
                    }
                    (Some(_), Some(_)) if self.geometry.is_some() || self.depth.is_some() => {
                        v.push("macro_flow.a_bar excludes geometry and depth".into())
                    }
                    _ => {}
                }
                if let Some(d) = c.transport_divisor {
                    let inclusions =
                        c.variant.unwrap_or(MacroVariant::Inclusions) == MacroVariant::Inclusions;
                    if !(d > 0.0 && d.is_finite()) || (inclusions && d > 1.0) {
                        v.push(format!(
                            "macro_flow.transport_divisor = {d} must be positive (and at most 1 for inclusions)"
                        ));
                    }
                }
                if c.variant.is_some() && c.a_bar.is_none() {
                    v.push("macro_flow.variant only applies to an explicit a_bar".into());
                }
                if let Err(e) = c.forcing.validate() {
                    v.push(format!("macro_flow.forcing: {e}"));
                }
            }
            ScenarioKind::EpsStudy => {
                let c = &self.eps_study;
                if c.eps.is_empty() {
                    v.push("eps_study.eps must not be empty".into());
                }
                for (i, &e) in c.eps.iter().enumerate() {
                    match inverse_eps(e) {
                        Err(err) => v.push(format!("eps_study.eps[{i}]: {err}")),
                        Ok(inv) => {
                            if c.m < MIN_NODES_PER_CELL * inv || c.m % inv != 0 {
                                v.push(format!(
                                    "eps_study.m = {} must be a multiple of 1/ε = {inv} with at least {MIN_NODES_PER_CELL} nodes per cell",
                                    c.m
                                ));
                            }
                        }
                    }
                }
                if let Some(d) = &self.depth {
                    if !d.is_smooth() {
                        v.push("eps-study needs a smooth depth profile".into());
                    }
                }
                if !(c.t_end >= 0.0 && c.t_end.is_finite()) {
                    v.push(format!("eps_study.t_end = {} must be nonnegative", c.t_end));
                }
                if !(c.dt > 0.0 && c.dt.is_finite()) {
                    v.push(format!("eps_study.dt = {} must be positive", c.dt));
                }
                if c.kmax == 0 || 3 * c.kmax as usize > c.m {
                    v.push(format!("eps_study.kmax = {} must lie in [1, m/3]", c.kmax));
                }
            }
        }
        v
    }
}

fn geometry_violations(g: &GeometryConfig, v: &mut Vec<String>) {
    match g {
        GeometryConfig::Explicit { microstructure } => {
            if let Err(e) = microstructure.ensure_valid() {
                v.push(format!("geometry: {e}"));
            }
        }
        GeometryConfig::Disk { fraction, hardcore } => {
            if !(*fraction >= 0.0 && *fraction < std::f64::consts::PI / 4.0) {
                v.push(format!(
                    "geometry.fraction = {fraction} must lie in [0, π/4)"
                ));
            }
            if !(*hardcore > 0.0) {
                v.push(format!("geometry.hardcore = {hardcore} must be positive"));
            }
        }
        GeometryConfig::Random {
            fraction, hardcore, ..
        } => {
            if !(*fraction >= 0.0 && *fraction <= crate::microgeom::MAX_RANDOM_FRACTION) {
                v.push(format!(
                    "geometry.fraction = {fraction} must lie in [0, {}]",
                    crate::microgeom::MAX_RANDOM_FRACTION
                ));
            }
            if !(*hardcore > 0.0) {
                v.push(format!("geometry.hardcore = {hardcore} must be positive"));
            }
        }
    }
}

/// Keys of `raw` that are absent from the re-serialized `typed` tree.
fn unknown_keys(raw: &Value, typed: &Value, path: &str, out: &mut Vec<String>) {
    match (raw, typed) {
        (Value::Object(r), Value::Object(t)) => {
            for (k, rv) in r {
                let p = if path.is_empty() {
                    k.clone()
                } else {
                    format!("{path}.{k}")
                };
                match t.get(k) {
                    Some(tv) => unknown_keys(rv, tv, &p, out),
                    None => out.push(p),
                }
            }
        }
        (Value::Array(r), Value::Array(t)) => {
            for (i, (rv, tv)) in r.iter().zip(t).enumerate() {
                unknown_keys(rv, tv, &format!("{path}[{i}]"), out);
            }
        }
        _ => {}
    }
}

/// Parses and validates a configuration text.
pub fn parse_config(text: &str) -> Result<ScenarioConfig> {
    let raw: Value = serde_json::from_str(text).map_err(|e| {
        Error::Config(vec![format!(
            "parse error at line {}, column {}: {e}",
            e.line(),
            e.column()
        )])
    })?;
    if !raw.is_object() {
        return Err(Error::Config(vec![
            "configuration must be a JSON object".into()
        ]));
    }
    let cfg: ScenarioConfig = serde_json::from_value(raw.clone())
        .map_err(|e| Error::Config(vec![format!("schema error: {e}")]))?;
    let typed = serde_json::to_value(&cfg).expect("config serializes");
    let mut errors = Vec::new();
    let mut unknown = Vec::new();
    unknown_keys(&raw, &typed, "", &mut unknown);
    errors.extend(unknown.into_iter().map(|k| format!("unknown key \"{k}\"")));
    for sec in ["coord", "micro_flow", "macro_flow", "eps_study"] {
        if raw.get(sec).is_some() && cfg.kind.section() != Some(sec) {
            errors.push(format!(
                "section \"{sec}\" is not used by kind {}",
                cfg.kind.as_str()
            ));
        }
    }
    errors.extend(cfg.violations());
    if errors.is_empty() {
        Ok(cfg)
    } else {
        Err(Error::Config(errors))
    }
}

pub fn load_config(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}
