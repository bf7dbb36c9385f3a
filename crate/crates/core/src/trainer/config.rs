use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::agent::AgentConfig;
use crate::envs::EnvConfig;
use crate::error::{Error, Result};
use crate::srl::{SrlConfig, SrlMethod};

/// What the SRL interval counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalUnit {
    /// Outer learning iterations (rollout + update).
    Iteration,
    /// Individual optimizer steps.
    GradientStep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerSection {
    pub seed: u64,
    pub max_iterations: u64,
    pub rollout_length: usize,
    pub srl_interval: u64,
    pub srl_interval_unit: IntervalUnit,
    pub data_proportion: f64,
    pub checkpoint_every: u64,
    pub max_consecutive_skips: u32,
}

impl Default for TrainerSection {
    fn default() -> Self {
        TrainerSection {
            seed: 0,
            max_iterations: 2000,
            rollout_length: 32,
            srl_interval: 1,
            srl_interval_unit: IntervalUnit::Iteration,
            data_proportion: 1.0,
            checkpoint_every: 200,
            max_consecutive_skips: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoggingConfig {
    /// Run directory; `None` keeps everything in memory.
    pub out_dir: Option<PathBuf>,
    /// Rows of the fixed probe batch used for the embedding-std metric.
    pub probe_size: usize,
    /// Print a one-line summary every this many iterations (0 = silent).
    pub print_every: u64,
}

impl Default for LoggingConfig {
    fn default() -> Self {
        LoggingConfig {
            out_dir: None,
            probe_size: 256,
            print_every: 0,
        }
    }
}

/// Complete experiment description, the file form of the trainer config.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub agent: AgentConfig,
    pub srl: SrlConfig,
    pub trainer: TrainerSection,
    pub logging: LoggingConfig,
}

impl ExperimentConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text)
            .map_err(|e| Error::config("<config>", format!("invalid JSON: {e}")))?;
        Self::from_value(value)
    }

    pub fn from_value(value: Value) -> Result<Self> {
        serde_json::from_value(value).map_err(|e| Error::config("<config>", e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading config {}", path.display()), e))?;
        Self::from_json_str(&text)
    }

    /// Load `path` (or defaults) and apply dotted `key=value` overrides.
    pub fn load_with_overrides(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut value = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::io(format!("reading config {}", p.display()), e))?;
                serde_json::from_str(&text)
                    .map_err(|e| Error::config("<config>", format!("invalid JSON: {e}")))?
            }
            None => serde_json::to_value(Self::default()).expect("default config serializes"),
        };
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        Self::from_value(value)
    }

    /// Inject method-dependent defaults so the echoed config is explicit.
    pub fn resolve(&mut self) {
        self.srl.resolve();
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.agent.validate()?;
        self.srl.validate()?;
        let t = &self.trainer;
        if t.max_iterations < 1 {
            return Err(Error::config("trainer.max_iterations", "must be >= 1"));
        }
        if t.rollout_length < 1 {
            return Err(Error::config("trainer.rollout_length", "must be >= 1"));
        }
        if t.srl_interval < 1 {
            return Err(Error::config("trainer.srl_interval", "must be >= 1"));
        }
        if !(t.data_proportion > 0.0 && t.data_proportion <= 1.0) {
            return Err(Error::config("trainer.data_proportion", "must lie in (0, 1]"));
        }
        if t.checkpoint_every < 1 {
            return Err(Error::config("trainer.checkpoint_every", "must be >= 1"));
        }
        if t.max_consecutive_skips < 1 {
            return Err(Error::config("trainer.max_consecutive_skips", "must be >= 1"));
        }
        let batch = t.rollout_length * self.env.num_envs;
        if self.agent.minibatches > batch {
            return Err(Error::config(
                "agent.minibatches",
                format!("must not exceed the rollout batch size {batch}"),
            ));
        }
        if self.srl.method == SrlMethod::Spr && self.srl.spr_steps >= t.rollout_length {
            return Err(Error::config(
                "srl.spr_steps",
                format!("must be < trainer.rollout_length ({})", t.rollout_length),
            ));
        }
        if self.logging.probe_size < 2 {
            return Err(Error::config("logging.probe_size", "must be >= 2"));
        }
        Ok(())
    }

    pub fn to_pretty_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Set `a.b.c` in a JSON document. The value is parsed as JSON when
/// possible and taken as a string otherwise.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::config(assignment, "override must look like key=value"))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(Error::config(assignment, "override key is empty"));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cursor = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = cursor
            .as_object_mut()
            .ok_or_else(|| Error::config(key, format!("`{}` is not a section", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cursor = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("split yields at least one part")
}
