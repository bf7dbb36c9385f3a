use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use super::reference::{end_effector_velocity, reach, ReferenceLibrary, JOINTS};
use super::rewards::{action_rate_penalty, squared_norm, tracking_reward, weighted_sum};
use super::{check_len, EnvLayout, Environment, Transition, DT, SENSOR_NOISE, TRACKING_SIGMA};
use crate::error::Result;
use crate::rng::StreamRng;

const FRAME: usize = 4 * JOINTS + 1;

pub(super) static LAYOUT: EnvLayout = EnvLayout {
    frame_dim: FRAME,
    stack: 1,
    state_dim: FRAME + 2 * JOINTS + 2,
    action_dim: JOINTS,
    horizon: 300,
    term_names: &[
        "position_tracking",
        "distance_tracking",
        "action_rate",
        "joint_velocity",
        "joint_pos_limits",
    ],
    term_weights: &[2.0, 0.5, -1e-3, -5e-4, -1.0],
};

pub const TORQUE_GAIN: f64 = 2.0;
pub const JOINT_DAMPING: f64 = 0.5;
pub const JOINT_LIMIT: f64 = std::f64::consts::PI;
pub const SPEED_LIMIT: f64 = 50.0;
pub const INERTIA_RANGE: (f64, f64) = (0.8, 1.2);
/// OU disturbance: time constant, diffusion scale and clamp.
pub const OU_TAU: f64 = 0.5;
pub const OU_SCALE: f64 = 0.1;
pub const OU_CLAMP: f64 = 0.5;

/// Four decoupled damped joints imitating clips from a [`ReferenceLibrary`],
/// pushed around by an Ornstein-Uhlenbeck disturbance torque.
///
/// Frame layout (17 channels):
/// `[q(4), qdot_measured(4), a_prev(4), q_ref_next(4), phase_fraction]`.
/// The privileged tail holds per-joint inertia, the disturbance torque and
/// the end-effector world velocity.
#[derive(Debug, Clone)]
pub struct ChainMimicEnv {
    library: Arc<ReferenceLibrary>,
    pub(crate) q: [f64; JOINTS],
    pub(crate) qdot: [f64; JOINTS],
    pub(crate) inertia: [f64; JOINTS],
    pub(crate) disturbance: [f64; JOINTS],
    prev_action: [f64; JOINTS],
    clip: usize,
    phase: usize,
    step_count: u64,
    frame: [f64; FRAME],
}

impl PartialEq for ChainMimicEnv {
    fn eq(&self, other: &Self) -> bool {
        self.save() == other.save()
    }
}

const STATE_WORDS: usize = 5 * JOINTS + 3 + FRAME;

impl ChainMimicEnv {
    pub fn new(library: Arc<ReferenceLibrary>) -> Self {
        ChainMimicEnv {
            library,
            q: [0.0; JOINTS],
            qdot: [0.0; JOINTS],
            inertia: [1.0; JOINTS],
            disturbance: [0.0; JOINTS],
            prev_action: [0.0; JOINTS],
            clip: 0,
            phase: 0,
            step_count: 0,
            frame: [0.0; FRAME],
        }
    }

    pub fn clip(&self) -> usize {
        self.clip
    }

    pub fn phase(&self) -> usize {
        self.phase
    }

    fn next_phase(&self) -> usize {
        (self.phase + 1).min(self.library.frames() - 1)
    }

    /// Unweighted reward terms of the current state against the current
    /// reference frame, with `action` and `overshoot` from the last step.
    fn terms(&self, action: &[f64], overshoot: f64) -> Vec<f64> {
        let q_ref = self.library.position(self.clip, self.phase);
        let d_ref = self.library.distance(self.clip, self.phase);
        let dd = reach(&self.q) - d_ref;
        vec![
            tracking_reward(&self.q, q_ref, TRACKING_SIGMA),
            (-(dd * dd) / TRACKING_SIGMA).exp(),
            action_rate_penalty(action, &self.prev_action),
            squared_norm(&self.qdot),
            overshoot,
        ]
    }

    /// Terms the current state would score with a repeated previous action.
    pub fn current_terms(&self) -> Vec<f64> {
        self.terms(&self.prev_action, 0.0)
    }

    fn refresh_frame(&mut self, rng: &mut StreamRng) {
        let q_ref = self.library.position(self.clip, self.next_phase());
        for j in 0..JOINTS {
            self.frame[j] = self.q[j];
            self.frame[JOINTS + j] =
                self.qdot[j] + SENSOR_NOISE * rng.sample::<f64, _>(StandardNormal);
            self.frame[2 * JOINTS + j] = self.prev_action[j];
            self.frame[3 * JOINTS + j] = q_ref[j];
        }
        self.frame[4 * JOINTS] = self.phase as f64 / (self.library.frames() - 1) as f64;
    }
}

impl Environment for ChainMimicEnv {
    fn layout(&self) -> &'static EnvLayout {
        &LAYOUT
    }

    fn reset(&mut self, rng: &mut StreamRng) {
        self.clip = rng.random_range(0..self.library.clips());
        self.phase = 0;
        self.step_count = 0;
        self.q.copy_from_slice(self.library.position(self.clip, 0));
        self.qdot = [0.0; JOINTS];
        for m in self.inertia.iter_mut() {
            *m = rng.random_range(INERTIA_RANGE.0..INERTIA_RANGE.1);
        }
        self.disturbance = [0.0; JOINTS];
        self.prev_action = [0.0; JOINTS];
        self.refresh_frame(rng);
    }

    fn step(&mut self, action: &[f64], rng: &mut StreamRng) -> Transition {
        let mut overshoot = 0.0;
        for j in 0..JOINTS {
            let torque = TORQUE_GAIN * action[j] - JOINT_DAMPING * self.qdot[j] + self.disturbance[j];
            self.qdot[j] += DT * torque / self.inertia[j];
            self.q[j] += DT * self.qdot[j];
            if self.q[j].abs() > JOINT_LIMIT {
                overshoot += self.q[j].abs() - JOINT_LIMIT;
                self.q[j] = JOINT_LIMIT.copysign(self.q[j]);
                self.qdot[j] = 0.0;
            }
        }
        self.phase = self.next_phase();
        let terms = self.terms(action, overshoot);
        let reward = weighted_sum(LAYOUT.term_weights, &terms);

        let sqrt_dt = DT.sqrt();
        for d in self.disturbance.iter_mut() {
            let noise: f64 = rng.sample(StandardNormal);
            *d = (*d - DT * *d / OU_TAU + OU_SCALE * sqrt_dt * noise).clamp(-OU_CLAMP, OU_CLAMP);
        }
        self.prev_action.copy_from_slice(&action[..JOINTS]);
        self.step_count += 1;
        self.refresh_frame(rng);

        let finite = self.q.iter().chain(&self.qdot).all(|x| x.is_finite());
        let terminated = !finite || squared_norm(&self.qdot).sqrt() > SPEED_LIMIT;
        Transition {
            reward,
            terms,
            terminated,
            truncated: !terminated && self.step_count >= LAYOUT.horizon,
        }
    }

    fn state_vector(&self, out: &mut [f64]) {
        out[..FRAME].copy_from_slice(&self.frame);
        out[FRAME..FRAME + JOINTS].copy_from_slice(&self.inertia);
        out[FRAME + JOINTS..FRAME + 2 * JOINTS].copy_from_slice(&self.disturbance);
        out[FRAME + 2 * JOINTS..].copy_from_slice(&end_effector_velocity(&self.q, &self.qdot));
    }

    fn policy_vector(&self, out: &mut [f64]) {
        out[..FRAME].copy_from_slice(&self.frame);
        out[FRAME..].fill(0.0);
    }

    fn save(&self) -> Vec<f64> {
        let mut s = Vec::with_capacity(STATE_WORDS);
        for part in [&self.q, &self.qdot, &self.inertia, &self.disturbance, &self.prev_action] {
            s.extend_from_slice(part);
        }
        s.extend_from_slice(&[self.clip as f64, self.phase as f64, self.step_count as f64]);
        s.extend_from_slice(&self.frame);
        s
    }

    fn load(&mut self, s: &[f64]) -> Result<()> {
        check_len("chain mimic state", s, STATE_WORDS)?;
        let arr = |k: usize| -> [f64; JOINTS] { s[k * JOINTS..(k + 1) * JOINTS].try_into().unwrap() };
        let clip = s[5 * JOINTS] as usize;
        let phase = s[5 * JOINTS + 1] as usize;
        if clip >= self.library.clips() || phase >= self.library.frames() {
            return Err(crate::Error::Format(format!(
                "mimic state references clip {clip} frame {phase} outside the library"
            )));
        }
        self.q = arr(0);
        self.qdot = arr(1);
        self.inertia = arr(2);
        self.disturbance = arr(3);
        self.prev_action = arr(4);
        self.clip = clip;
        self.phase = phase;
        self.step_count = s[5 * JOINTS + 2] as u64;
        self.frame.copy_from_slice(&s[5 * JOINTS + 3..]);
        Ok(())
    }
}
