//! Vectorized toy control tasks with a proprioceptive / privileged split.
//!
//! Every state vector `s` starts with the proprioceptive observation `o`;
//! privileged-only channels trail it, so zeroing the tail of `s` yields
//! exactly the policy input.

mod mimic;
mod reference;
pub mod rewards;
mod vec_env;
mod velocity;

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::rng::StreamRng;

pub use mimic::ChainMimicEnv;
pub use reference::ReferenceLibrary;
pub use vec_env::{EnvConfig, EpisodeSummary, Observation, VecEnv, VecStep};
pub use velocity::PlanarVelocityEnv;

/// Integration step shared by both tasks (50 Hz).
pub const DT: f64 = 0.02;
/// Width of every exponential tracking kernel.
pub const TRACKING_SIGMA: f64 = 0.25;
/// Std of Gaussian sensor noise on accelerometer and joint-velocity channels.
pub const SENSOR_NOISE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    PlanarVelocity,
    ChainMimic,
}

impl EnvKind {
    pub fn name(self) -> &'static str {
        match self {
            EnvKind::PlanarVelocity => "planar_velocity",
            EnvKind::ChainMimic => "chain_mimic",
        }
    }

    pub fn layout(self) -> &'static EnvLayout {
        match self {
            EnvKind::PlanarVelocity => &velocity::LAYOUT,
            EnvKind::ChainMimic => &mimic::LAYOUT,
        }
    }
}

/// Static shape description of a task.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvLayout {
    pub frame_dim: usize,
    pub stack: usize,
    pub state_dim: usize,
    pub action_dim: usize,
    pub horizon: u64,
    pub term_names: &'static [&'static str],
    pub term_weights: &'static [f64],
}

impl EnvLayout {
    /// Length of the proprioceptive prefix of the state.
    pub fn proprio_dim(&self) -> usize {
        self.frame_dim * self.stack
    }

    /// Indices of privileged-only state entries.
    pub fn privileged_mask(&self) -> Range<usize> {
        self.proprio_dim()..self.state_dim
    }

    pub fn mask_indices(&self) -> Vec<usize> {
        self.privileged_mask().collect()
    }
}

/// Outcome of one environment step for a single instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub reward: f64,
    /// Unweighted reward terms, ordered as [`EnvLayout::term_names`].
    pub terms: Vec<f64>,
    /// Blow-up guard tripped; no bootstrapping.
    pub terminated: bool,
    /// Horizon reached; the critic bootstraps from the final state.
    pub truncated: bool,
}

/// A single simulated instance. Randomness is drawn only from the rng passed
/// in, so one stream per instance fixes the whole trajectory.
pub trait Environment: Send {
    fn layout(&self) -> &'static EnvLayout;
    fn reset(&mut self, rng: &mut StreamRng);
    /// `action` must already be finite and clipped to [-1, 1].
    fn step(&mut self, action: &[f64], rng: &mut StreamRng) -> Transition;
    /// Full privileged state `s` as f64.
    fn state_vector(&self, out: &mut [f64]);
    /// Proprioceptive frames followed by zeros, built without reading any
    /// privileged channel.
    fn policy_vector(&self, out: &mut [f64]);
    fn save(&self) -> Vec<f64>;
    fn load(&mut self, state: &[f64]) -> Result<()>;
}

/// Wrap an angle to (-pi, pi].
pub fn wrap_angle(theta: f64) -> f64 {
    use std::f64::consts::PI;
    let t = theta.rem_euclid(2.0 * PI);
    if t > PI {
        t - 2.0 * PI
    } else {
        t
    }
}

pub(crate) fn check_len(what: &str, state: &[f64], expected: usize) -> Result<()> {
    if state.len() != expected {
        return Err(crate::Error::shape(what, &[expected], &[state.len()]));
    }
    Ok(())
}
