//! Run configuration: JSON schema and resolution into core types.

use anyhow::{bail, Context, Result};
use parobs_core::fixtures;
use parobs_core::mesh::SpaceTimeGrid;
use parobs_core::solver::{BoundarySpec, DataSpec, Scenario, SolverOpts, SourceSpec};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub pipeline: Vec<StageConfig>,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
    /// Seed for randomized test utilities only; the pipeline itself is
    /// deterministic.
    #[serde(default)]
    pub seed: u64,
}

fn default_output_dir() -> String {
    "out".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScenarioConfig {
    Builtin {
        builtin: String,
        h: f64,
        #[serde(default)]
        solver: Option<SolverOpts>,
    },
    Inline {
        dim: usize,
        #[serde(rename = "L")]
        halfwidth: f64,
        h: f64,
        #[serde(default)]
        dt: Option<f64>,
        t_range: (f64, f64),
        f: SourceSpec,
        initial: DataSpec,
        boundary: BoundarySpec,
        #[serde(default)]
        name: Option<String>,
        #[serde(default)]
        solver: Option<SolverOpts>,
    },
}

impl ScenarioConfig {
    /// Resolve to a concrete scenario; `resolution` overrides `h`.
    pub fn resolve(&self, resolution: Option<f64>) -> Result<Scenario> {
        match self {
            ScenarioConfig::Builtin { builtin, h, solver } => {
                let mut sc = fixtures::scenario_by_name(builtin, resolution.unwrap_or(*h))
                    .with_context(|| format!("building scenario `{builtin}`"))?;
                if let Some(opts) = solver {
                    let store = sc.opts.store_every;
                    sc.opts = opts.clone();
                    if sc.opts.store_every == 0 {
                        sc.opts.store_every = store;
                    }
                }
                Ok(sc)
            }
            ScenarioConfig::Inline {
                dim,
                halfwidth,
                h,
                dt,
                t_range,
                f,
                initial,
                boundary,
                name,
                solver,
            } => {
                let h = resolution.unwrap_or(*h);
                // parabolic scaling by default
                let dt = dt.unwrap_or(h * h);
                let grid = SpaceTimeGrid::new(*dim, *halfwidth, h, dt, *t_range)
                    .context("invalid grid")?;
                let sc = Scenario {
                    name: name.clone().unwrap_or_else(|| "inline".into()),
                    grid,
                    f: f.clone(),
                    initial: initial.clone(),
                    boundary: boundary.clone(),
                    opts: solver.clone().unwrap_or_default(),
                };
                sc.validate().context("scenario validation")?;
                Ok(sc)
            }
        }
    }

    pub fn name(&self) -> String {
        match self {
            ScenarioConfig::Builtin { builtin, .. } => builtin.clone(),
            ScenarioConfig::Inline { name, .. } => {
                name.clone().unwrap_or_else(|| "inline".into())
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "snake_case")]
pub enum StageConfig {
    Solve(SolveStage),
    Classify(ClassifyStage),
    Trace(TraceStage),
    Checks(ChecksStage),
    Dimension(DimensionStage),
}

impl StageConfig {
    pub fn kind(&self) -> StageKind {
        match self {
            StageConfig::Solve(_) => StageKind::Solve,
            StageConfig::Classify(_) => StageKind::Classify,
            StageConfig::Trace(_) => StageKind::Trace,
            StageConfig::Checks(_) => StageKind::Checks,
            StageConfig::Dimension(_) => StageKind::Dimension,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageKind {
    Solve,
    Classify,
    Trace,
    Checks,
    Dimension,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SolveStage {
    #[serde(default = "yes")]
    pub dump_field: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifyStage {
    #[serde(default)]
    pub points: PointSelection,
    /// Restrict the scan to a time window.
    #[serde(default)]
    pub window: Option<(f64, f64)>,
    #[serde(default = "one")]
    pub time_stride: usize,
    #[serde(default = "one")]
    pub spatial_stride: usize,
}

fn one() -> usize {
    1
}

impl Default for ClassifyStage {
    fn default() -> Self {
        Self {
            points: PointSelection::Auto,
            window: None,
            time_stride: 1,
            spatial_stride: 1,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PointSelection {
    #[default]
    #[serde(with = "auto_str")]
    Auto,
    Explicit(Vec<(Vec<f64>, f64)>),
}

mod auto_str {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str("auto")
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<(), D::Error> {
        let v = String::deserialize(d)?;
        if v == "auto" {
            Ok(())
        } else {
            Err(D::Error::custom("expected \"auto\""))
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceStage {
    pub gammas: Vec<f64>,
    #[serde(default)]
    pub points: PointSelection,
    #[serde(default)]
    pub r_min: Option<f64>,
    #[serde(default)]
    pub r_max: Option<f64>,
    /// Cap on the number of auto-selected base points.
    #[serde(default = "default_max_points")]
    pub max_points: usize,
}

fn default_max_points() -> usize {
    2
}

impl Default for TraceStage {
    fn default() -> Self {
        Self {
            gammas: vec![2.25],
            points: PointSelection::Auto,
            r_min: None,
            r_max: None,
            max_points: default_max_points(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChecksStage {
    #[serde(default = "default_enabled")]
    pub enable: Vec<String>,
    /// Per-check ceilings (floors for floor-type checks).
    #[serde(default)]
    pub limits: BTreeMap<String, f64>,
    #[serde(default = "default_epsilon")]
    pub cleaning_epsilon: f64,
    #[serde(default = "default_delta")]
    pub doubling_delta: f64,
    #[serde(default = "default_decay_slack")]
    pub decay_slack: f64,
    #[serde(default)]
    pub saturation_schedule: Vec<f64>,
}

fn default_enabled() -> Vec<String> {
    ["cubic", "weiss", "frequency", "monneau", "doubling"]
        .map(String::from)
        .to_vec()
}

fn default_epsilon() -> f64 {
    0.5
}

fn default_delta() -> f64 {
    0.25
}

fn default_decay_slack() -> f64 {
    0.2
}

impl Default for ChecksStage {
    fn default() -> Self {
        Self {
            enable: default_enabled(),
            limits: BTreeMap::new(),
            cleaning_epsilon: default_epsilon(),
            doubling_delta: default_delta(),
            decay_slack: default_decay_slack(),
            saturation_schedule: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DimensionStage {
    #[serde(default = "default_delta_min")]
    pub delta_min: f64,
    #[serde(default = "default_delta_max")]
    pub delta_max: f64,
    #[serde(default = "default_delta_count")]
    pub delta_count: usize,
}

fn default_delta_min() -> f64 {
    1.0 / 128.0
}

fn default_delta_max() -> f64 {
    0.25
}

fn default_delta_count() -> usize {
    8
}

impl Default for DimensionStage {
    fn default() -> Self {
        Self {
            delta_min: default_delta_min(),
            delta_max: default_delta_max(),
            delta_count: default_delta_count(),
        }
    }
}

/// Parse a config document, reporting schema errors with a JSON path.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let value: serde_json::Value =
        serde_json::from_str(text).context("config is not valid JSON")?;
    let config: RunConfig = serde_json::from_value(value.clone()).map_err(|e| {
        anyhow::anyhow!("config schema error: {e} (near {})", locate(&value, &e))
    })?;
    // eager validation of the scenario invariants
    config
        .scenario
        .resolve(None)
        .context("scenario validation")?;
    validate_dependencies(&config)?;
    Ok(config)
}

/// Best-effort JSON pointer for a serde error (top-level key heuristics).
fn locate(value: &serde_json::Value, err: &serde_json::Error) -> String {
    let msg = err.to_string();
    for key in ["scenario", "pipeline", "output_dir", "seed"] {
        if msg.contains(key) {
            return format!("/{key}");
        }
    }
    if value.get("scenario").is_none() {
        return "/scenario (missing)".into();
    }
    "/".into()
}

fn validate_dependencies(config: &RunConfig) -> Result<()> {
    let kinds: Vec<StageKind> = config.pipeline.iter().map(|s| s.kind()).collect();
    let pos = |k: StageKind| kinds.iter().position(|&x| x == k);
    if let Some(t) = pos(StageKind::Trace) {
        if pos(StageKind::Solve).is_none_or(|s| s > t) {
            bail!("pipeline: trace requires a prior solve stage");
        }
    }
    if let Some(c) = pos(StageKind::Checks) {
        if pos(StageKind::Trace).is_none_or(|t| t > c) {
            bail!("pipeline: checks require a prior trace stage");
        }
    }
    if let Some(d) = pos(StageKind::Dimension) {
        if pos(StageKind::Classify).is_none_or(|c| c > d) {
            bail!("pipeline: dimension requires a prior classify stage");
        }
    }
    Ok(())
}
