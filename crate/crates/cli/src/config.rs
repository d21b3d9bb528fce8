//! Run configuration: one structured JSON document, schema-validated before
//! any computation. Unknown keys are rejected.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use volterra_core::driver::{BackendSpec, DriverState};
use volterra_core::generator::{self, Generator};
use volterra_core::grid::TimeGrid;
use volterra_core::position::Position;

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExperimentKind {
    #[serde(rename = "solve-type1")]
    SolveType1,
    #[serde(rename = "solve-type2")]
    SolveType2,
    #[serde(rename = "partition-convergence")]
    PartitionConvergence,
    #[serde(rename = "risk-axioms")]
    RiskAxioms,
    #[serde(rename = "bsde-oracle")]
    BsdeOracle,
    #[serde(rename = "inconsistency-demo")]
    InconsistencyDemo,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::SolveType1 => "solve-type1",
            ExperimentKind::SolveType2 => "solve-type2",
            ExperimentKind::PartitionConvergence => "partition-convergence",
            ExperimentKind::RiskAxioms => "risk-axioms",
            ExperimentKind::BsdeOracle => "bsde-oracle",
            ExperimentKind::InconsistencyDemo => "inconsistency-demo",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriverConfig {
    pub backend: String,
    pub horizon: f64,
    pub steps: usize,
    #[serde(default)]
    pub paths: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub basis_degree: Option<usize>,
}

impl DriverConfig {
    pub fn build(&self) -> Result<DriverState, CliError> {
        let grid = TimeGrid::uniform(self.horizon, self.steps)?;
        let spec = match self.backend.as_str() {
            "lattice" => BackendSpec::Lattice,
            "path-tree" => BackendSpec::PathTree,
            "monte-carlo" => BackendSpec::MonteCarlo {
                paths: self.paths.unwrap_or(4096),
                seed: self.seed.unwrap_or(0),
                basis_degree: self.basis_degree.unwrap_or(4),
            },
            other => {
                return Err(CliError::Config(format!(
                    "unknown backend '{other}' (expected lattice | path-tree | monte-carlo)"
                )))
            }
        };
        Ok(DriverState::build(grid, spec)?)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    /// only for name = "sum": the parts to add.
    #[serde(default)]
    pub parts: Vec<GeneratorConfig>,
}

impl GeneratorConfig {
    pub fn build(&self) -> Result<Generator, CliError> {
        if self.name == "sum" {
            if self.parts.is_empty() {
                return Err(CliError::Config("'sum' needs a nonempty parts list".into()));
            }
            let mut acc = self.parts[0].build()?;
            for part in &self.parts[1..] {
                acc = Generator::sum(&acc, &part.build()?);
            }
            return Ok(acc);
        }
        if self.name == "discounted" {
            if self.parts.len() != 1 {
                return Err(CliError::Config(
                    "'discounted' needs exactly one part, the z-generator g0".into(),
                ));
            }
            let rate = self.params.get("rate").copied().ok_or_else(|| {
                CliError::Config("'discounted' needs parameter 'rate'".into())
            })?;
            let g0 = self.parts[0].build()?;
            return Ok(generator::discounted(rate, &g0)?);
        }
        if !self.parts.is_empty() {
            return Err(CliError::Config(
                "'parts' is only meaningful for name = 'sum' or 'discounted'".into(),
            ));
        }
        if self.name == "custom" {
            return Err(CliError::Config(
                "custom generators are constructed in code, not from config".into(),
            ));
        }
        Ok(generator::from_name(&self.name, &self.params)?)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind")]
pub enum PositionConfig {
    #[serde(rename = "constant")]
    Constant { c: f64 },
    #[serde(rename = "linear_terminal")]
    LinearTerminal { a: f64 },
    #[serde(rename = "call_terminal")]
    CallTerminal { strike: f64 },
    #[serde(rename = "running_max")]
    RunningMax,
    #[serde(rename = "custom_expression")]
    CustomExpression { expr: String },
}

impl PositionConfig {
    pub fn build(&self) -> Result<Position, CliError> {
        Ok(match self {
            PositionConfig::Constant { c } => Position::Constant(*c),
            PositionConfig::LinearTerminal { a } => Position::LinearTerminal { slope: *a },
            PositionConfig::CallTerminal { strike } => Position::CallTerminal { strike: *strike },
            PositionConfig::RunningMax => Position::RunningMax,
            PositionConfig::CustomExpression { expr } => Position::expression(expr)?,
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskConfig {
    pub g0: GeneratorConfig,
    #[serde(default)]
    pub rate: f64,
    #[serde(default = "default_instances")]
    pub instances: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_instances() -> usize {
    50
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceConfig {
    #[serde(default)]
    pub picard: Option<f64>,
    #[serde(default)]
    pub inner: Option<f64>,
    #[serde(default)]
    pub axiom: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: ExperimentKind,
    pub driver: DriverConfig,
    #[serde(default)]
    pub generator: Option<GeneratorConfig>,
    #[serde(default)]
    pub position: Option<PositionConfig>,
    #[serde(default)]
    pub risk: Option<RiskConfig>,
    /// coarse partition ladder for partition-convergence.
    #[serde(default)]
    pub levels: Vec<usize>,
    /// optional closed-form reference value for bsde-oracle.
    #[serde(default)]
    pub reference: Option<f64>,
    #[serde(default)]
    pub tolerances: ToleranceConfig,
    #[serde(default)]
    pub z_clip: Option<f64>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let value: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| CliError::Config(format!("config is not valid JSON: {e}")))?;
        Self::from_value(value)
    }

    pub fn from_value(value: serde_json::Value) -> Result<Self, CliError> {
        serde_json::from_value(value).map_err(|e| CliError::Config(format!("bad config: {e}")))
    }

    /// Canonical serialization used for the provenance hash.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        format!("{:016x}", fnv1a64(self.canonical_json().as_bytes()))
    }
}

/// FNV-1a, 64 bit; provenance fingerprint for emitted files.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Apply `key.path=value` overrides to a parsed JSON document before
/// deserialization. Values parse as JSON scalars when possible and fall
/// back to strings.
pub fn apply_overrides(
    mut value: serde_json::Value,
    overrides: &[String],
) -> Result<serde_json::Value, CliError> {
    for entry in overrides {
        let (path, raw) = entry
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("override '{entry}' is not KEY=VALUE")))?;
        let new_value: serde_json::Value = serde_json::from_str(raw)
            .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
        let mut cursor = &mut value;
        let segments: Vec<&str> = path.split('.').collect();
        for (idx, segment) in segments.iter().enumerate() {
            let last = idx + 1 == segments.len();
            if last {
                cursor
                    .as_object_mut()
                    .ok_or_else(|| {
                        CliError::Config(format!(
                            "override path '{path}' does not address an object"
                        ))
                    })?
                    .insert(segment.to_string(), new_value.clone());
            } else {
                cursor = cursor
                    .as_object_mut()
                    .ok_or_else(|| {
                        CliError::Config(format!(
                            "override path '{path}' does not address an object"
                        ))
                    })?
                    .entry(segment.to_string())
                    .or_insert_with(|| serde_json::Value::Object(Default::default()));
            }
        }
    }
    Ok(value)
}
