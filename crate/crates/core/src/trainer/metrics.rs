use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One line of `metrics.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub iteration: u64,
    pub wall_time: f64,
    /// Mean return of episodes that finished during this iteration.
    pub mean_episode_reward: Option<f64>,
    pub episodes_completed: usize,
    /// Mean per-step reward over the rollout (unnormalized).
    pub mean_step_reward: f64,
    /// Mean unweighted value of each reward term over the rollout.
    pub reward_terms: BTreeMap<String, f64>,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub srl_loss: Option<f64>,
    pub mean_kl: f64,
    pub learning_rate: f64,
    pub srl_active: bool,
    /// Optimizer steps that received a nonzero SRL gradient.
    pub srl_updates: u32,
    /// Mean L2 norm of the weighted SRL gradient over this iteration's steps.
    pub srl_grad_norm: f64,
    pub grad_norm: f64,
    pub skipped_updates: u32,
    /// Mean over latent dimensions of the probe-batch std of `z / ||z||`.
    pub embedding_std: f64,
    pub embedding_std_min: f64,
}

impl MetricsRecord {
    /// Metric by name, for export. `reward_terms.<name>` addresses a term.
    pub fn get(&self, name: &str) -> Option<f64> {
        if let Some(term) = name.strip_prefix("reward_terms.") {
            return self.reward_terms.get(term).copied();
        }
        Some(match name {
            "iteration" => self.iteration as f64,
            "wall_time" => self.wall_time,
            "mean_episode_reward" => return self.mean_episode_reward,
            "episodes_completed" => self.episodes_completed as f64,
            "mean_step_reward" => self.mean_step_reward,
            "policy_loss" => self.policy_loss,
            "value_loss" => self.value_loss,
            "entropy" => self.entropy,
            "srl_loss" => return self.srl_loss,
            "mean_kl" => self.mean_kl,
            "learning_rate" => self.learning_rate,
            "srl_active" => f64::from(u8::from(self.srl_active)),
            "srl_updates" => self.srl_updates as f64,
            "srl_grad_norm" => self.srl_grad_norm,
            "grad_norm" => self.grad_norm,
            "skipped_updates" => self.skipped_updates as f64,
            "embedding_std" => self.embedding_std,
            "embedding_std_min" => self.embedding_std_min,
            _ => return None,
        })
    }

    /// Equality ignoring wall-clock time.
    pub fn same_values(&self, other: &Self) -> bool {
        let mut a = self.clone();
        a.wall_time = other.wall_time;
        &a == other
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let file = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    let mut out = vec![];
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| {
            Error::Format(format!("{} line {}: {e}", path.display(), i + 1))
        })?);
    }
    Ok(out)
}

/// Append-only JSONL writer, flushed after every record.
pub struct MetricsWriter {
    file: File,
}

impl MetricsWriter {
    /// Open for appending, first dropping records past `keep_through` so a
    /// resumed run does not duplicate iterations.
    pub fn open(path: &Path, keep_through: u64) -> Result<Self> {
        if path.exists() {
            let kept: Vec<MetricsRecord> = read_metrics(path)?
                .into_iter()
                .filter(|r| r.iteration <= keep_through)
                .collect();
            let mut text = String::new();
            for r in &kept {
                text.push_str(&serde_json::to_string(r).expect("record serializes"));
                text.push('\n');
            }
            std::fs::write(path, text).map_err(|e| Error::io(format!("rewriting {}", path.display()), e))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
        Ok(MetricsWriter { file })
    }

    pub fn write(&mut self, record: &MetricsRecord) -> Result<()> {
        let line = serde_json::to_string(record).expect("record serializes");
        writeln!(self.file, "{line}")
            .and_then(|_| self.file.flush())
            .map_err(|e| Error::io("writing metrics", e))
    }
}
