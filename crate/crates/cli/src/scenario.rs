//! Scenario files: TOML describing the task stream, backend, memory model and
//! which systems to compare.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed scenario: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid scenario field `{field}`: {message}")]
    Invalid { field: &'static str, message: String },
    #[error("unknown built-in scenario `{0}` (available: extreme100, extreme100_noisy)")]
    UnknownBuiltin(String),
}

fn invalid(field: &'static str, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid {
        field,
        message: message.into(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    Logcl,
    SingleReplay,
    Buffer,
}

impl SystemKind {
    pub const ALL: [SystemKind; 3] = [
        SystemKind::Logcl,
        SystemKind::SingleReplay,
        SystemKind::Buffer,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SystemKind::Logcl => "logcl",
            SystemKind::SingleReplay => "single_replay",
            SystemKind::Buffer => "buffer",
        }
    }
}

/// Either an explicit list of sizes or `count` tasks of `size` samples.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sizes: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<u64>,
}

impl TaskSpec {
    pub fn resolve(&self) -> Result<Vec<u64>, ScenarioError> {
        let sizes = match (&self.sizes, self.count, self.size) {
            (Some(sizes), None, None) => sizes.clone(),
            (None, Some(count), Some(size)) => vec![size; count as usize],
            (Some(_), _, _) => {
                return Err(invalid(
                    "tasks",
                    "give either `sizes` or `count` + `size`, not both",
                ))
            }
            _ => {
                return Err(invalid(
                    "tasks",
                    "need `sizes = [...]` or both `count` and `size`",
                ))
            }
        };
        if sizes.is_empty() {
            return Err(invalid("tasks", "task list is empty"));
        }
        if let Some(i) = sizes.iter().position(|&s| s == 0) {
            return Err(invalid("tasks", format!("task {} has size 0", i + 1)));
        }
        if u32::try_from(sizes.len()).is_err() {
            return Err(invalid("tasks", "too many tasks"));
        }
        Ok(sizes)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendSpec {
    Analytic {
        #[serde(default = "default_base_error")]
        base_error: f64,
        #[serde(default = "default_growth")]
        growth: f64,
    },
    Noisy {
        sigma: f64,
    },
}

fn default_base_error() -> f64 {
    0.01
}

fn default_growth() -> f64 {
    1.5
}

impl Default for BackendSpec {
    fn default() -> Self {
        BackendSpec::Analytic {
            base_error: default_base_error(),
            growth: default_growth(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemorySpec {
    #[serde(default = "default_s_max")]
    pub s_max: f64,
    /// Defaults to `0.01 * s_max`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_sample_raw: Option<f64>,
}

fn default_s_max() -> f64 {
    1.0
}

impl Default for MemorySpec {
    fn default() -> Self {
        MemorySpec {
            s_max: default_s_max(),
            per_sample_raw: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PayloadSpec {
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_classes")]
    pub classes: u32,
}

fn default_dim() -> usize {
    32
}

fn default_classes() -> u32 {
    10
}

impl Default for PayloadSpec {
    fn default() -> Self {
        PayloadSpec {
            dim: default_dim(),
            classes: default_classes(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RehearsalSpec {
    #[serde(default)]
    pub draws: u64,
    #[serde(default = "default_sigma_aug")]
    pub sigma_aug: f64,
}

fn default_sigma_aug() -> f64 {
    0.05
}

impl Default for RehearsalSpec {
    fn default() -> Self {
        RehearsalSpec {
            draws: 0,
            sigma_aug: default_sigma_aug(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistogramSpec {
    #[serde(default = "default_edges")]
    pub edges: Vec<f64>,
}

impl Default for HistogramSpec {
    fn default() -> Self {
        HistogramSpec {
            edges: default_edges(),
        }
    }
}

/// 1, 2, 5 per decade from 1e-4 to 1e4, parsed from decimal text so every
/// platform gets the same bits.
pub fn default_edges() -> Vec<f64> {
    let mut edges: Vec<f64> = (-4..4)
        .flat_map(|e| [1, 2, 5].map(|m| format!("{m}e{e}")))
        .map(|s| s.parse().expect("valid float literal"))
        .collect();
    edges.push(1e4);
    edges
}

fn default_unit() -> u64 {
    1
}

fn default_systems() -> Vec<SystemKind> {
    SystemKind::ALL.to_vec()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub tasks: TaskSpec,
    #[serde(default = "default_systems")]
    pub systems: Vec<SystemKind>,
    /// Samples per unit for the large-volume variant.
    #[serde(default = "default_unit")]
    pub unit: u64,
    #[serde(default)]
    pub backend: BackendSpec,
    #[serde(default)]
    pub memory: MemorySpec,
    #[serde(default)]
    pub payload: PayloadSpec,
    #[serde(default)]
    pub rehearsal: RehearsalSpec,
    #[serde(default)]
    pub histogram: HistogramSpec,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let scenario: Scenario = toml::from_str(text)?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn builtin(name: &str) -> Result<Self, ScenarioError> {
        let base = Scenario {
            name: name.to_string(),
            seed: 100,
            tasks: TaskSpec {
                sizes: None,
                count: Some(100),
                size: Some(64),
            },
            systems: default_systems(),
            unit: 1,
            backend: BackendSpec::default(),
            memory: MemorySpec {
                s_max: 1.0,
                per_sample_raw: Some(0.01),
            },
            payload: PayloadSpec::default(),
            rehearsal: RehearsalSpec {
                draws: 6400,
                sigma_aug: default_sigma_aug(),
            },
            histogram: HistogramSpec::default(),
        };
        match name {
            "extreme100" => Ok(base),
            "extreme100_noisy" => Ok(Scenario {
                backend: BackendSpec::Noisy { sigma: 0.05 },
                ..base
            }),
            other => Err(ScenarioError::UnknownBuiltin(other.to_string())),
        }
    }

    pub fn task_sizes(&self) -> Result<Vec<u64>, ScenarioError> {
        self.tasks.resolve()
    }

    pub fn per_sample_raw(&self) -> f64 {
        self.memory.per_sample_raw.unwrap_or(0.01 * self.memory.s_max)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.name.trim().is_empty() {
            return Err(invalid("name", "must not be empty"));
        }
        self.task_sizes()?;
        if self.systems.is_empty() {
            return Err(invalid("systems", "select at least one system"));
        }
        let mut seen = self.systems.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.systems.len() {
            return Err(invalid("systems", "systems listed twice"));
        }
        if self.unit == 0 {
            return Err(invalid("unit", "must be at least 1"));
        }
        let positive = |v: f64| v > 0.0 && v.is_finite();
        match self.backend {
            BackendSpec::Analytic { base_error, growth } => {
                if !positive(base_error) {
                    return Err(invalid("backend.base_error", "must be positive"));
                }
                if !(growth >= 1.0 && growth.is_finite()) {
                    return Err(invalid("backend.growth", "must be at least 1"));
                }
            }
            BackendSpec::Noisy { sigma } => {
                if !(sigma >= 0.0 && sigma.is_finite()) {
                    return Err(invalid("backend.sigma", "must be nonnegative"));
                }
            }
        }
        if !positive(self.memory.s_max) {
            return Err(invalid("memory.s_max", "must be positive"));
        }
        if !positive(self.per_sample_raw()) {
            return Err(invalid("memory.per_sample_raw", "must be positive"));
        }
        if self.payload.classes == 0 {
            return Err(invalid("payload.classes", "must be at least 1"));
        }
        if !(self.rehearsal.sigma_aug >= 0.0 && self.rehearsal.sigma_aug.is_finite()) {
            return Err(invalid("rehearsal.sigma_aug", "must be nonnegative"));
        }
        let edges = &self.histogram.edges;
        if edges.len() < 2
            || edges
                .windows(2)
                .any(|w| !(w[0].is_finite() && w[1].is_finite() && w[0] < w[1]))
        {
            return Err(invalid(
                "histogram.edges",
                "need at least two finite, strictly increasing edges",
            ));
        }
        Ok(())
    }
}
