use rand::Rng;
use rand_distr::StandardNormal;

use super::rewards::{action_smoothness_penalty, squared_norm, tracking_reward, weighted_sum};
use super::{check_len, wrap_angle, EnvLayout, Environment, Transition, DT, SENSOR_NOISE, TRACKING_SIGMA};
use crate::error::Result;
use crate::rng::StreamRng;

const FRAME: usize = 11;
const STACK: usize = 5;
const ACTIONS: usize = 3;

pub(super) static LAYOUT: EnvLayout = EnvLayout {
    frame_dim: FRAME,
    stack: STACK,
    state_dim: FRAME * STACK + 4,
    action_dim: ACTIONS,
    horizon: 500,
    term_names: &["lin_vel_tracking", "ang_vel_tracking", "action_smoothness", "energy"],
    term_weights: &[1.0, 0.5, -2.5e-3, -1e-3],
};

pub const FORCE_GAIN: f64 = 5.0;
pub const TORQUE_GAIN: f64 = 5.0;
pub const COMMAND_RESAMPLE_STEP: u64 = 250;
pub const SPEED_LIMIT: f64 = 10.0;
pub const CMD_VX: (f64, f64) = (-0.5, 1.0);
pub const CMD_VY: (f64, f64) = (-0.3, 0.3);
pub const CMD_YAW: (f64, f64) = (-1.0, 1.0);
pub const MASS_RANGE: (f64, f64) = (0.8, 1.2);
pub const DRAG_RANGE: (f64, f64) = (0.05, 0.15);

/// Planar rigid body driven by body-frame forces and a yaw torque, tracking a
/// body-frame velocity command.
///
/// Frame layout (11 channels, newest frame first in the stack):
/// `[yaw rate, accel_x, accel_y, vel_x, vel_y, cmd_vx, cmd_vy, cmd_yaw, a_prev(3)]`
/// with accelerometer, yaw rate and velocity readings in the body frame and
/// corrupted by sensor noise. The privileged tail holds the true body-frame
/// velocity, mass and linear drag.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanarVelocityEnv {
    pub(crate) pos: [f64; 2],
    pub(crate) vel: [f64; 2],
    pub(crate) heading: f64,
    pub(crate) yaw_rate: f64,
    pub(crate) mass: f64,
    pub(crate) drag: f64,
    pub(crate) yaw_drag: f64,
    pub(crate) command: [f64; 3],
    prev_action: [f64; 3],
    prev_action2: [f64; 3],
    step_count: u64,
    frames: [f64; FRAME * STACK],
}

impl Default for PlanarVelocityEnv {
    fn default() -> Self {
        PlanarVelocityEnv {
            pos: [0.0; 2],
            vel: [0.0; 2],
            heading: 0.0,
            yaw_rate: 0.0,
            mass: 1.0,
            drag: 0.1,
            yaw_drag: 0.1,
            command: [0.0; 3],
            prev_action: [0.0; 3],
            prev_action2: [0.0; 3],
            step_count: 0,
            frames: [0.0; FRAME * STACK],
        }
    }
}

const STATE_WORDS: usize = 2 + 2 + 1 + 1 + 3 + 3 + 3 + 3 + 1 + FRAME * STACK;

pub fn resample_command(rng: &mut StreamRng) -> [f64; 3] {
    [
        rng.random_range(CMD_VX.0..CMD_VX.1),
        rng.random_range(CMD_VY.0..CMD_VY.1),
        rng.random_range(CMD_YAW.0..CMD_YAW.1),
    ]
}

fn to_body(heading: f64, v: [f64; 2]) -> [f64; 2] {
    let (s, c) = heading.sin_cos();
    [c * v[0] + s * v[1], -s * v[0] + c * v[1]]
}

fn to_world(heading: f64, v: [f64; 2]) -> [f64; 2] {
    let (s, c) = heading.sin_cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1]]
}

impl PlanarVelocityEnv {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn body_velocity(&self) -> [f64; 2] {
        to_body(self.heading, self.vel)
    }

    pub fn command(&self) -> [f64; 3] {
        self.command
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    fn push_frame(&mut self, accel_body: [f64; 2], rng: &mut StreamRng) {
        let mut noise = || SENSOR_NOISE * rng.sample::<f64, _>(StandardNormal);
        let vb = self.body_velocity();
        let frame = [
            self.yaw_rate + noise(),
            accel_body[0] + noise(),
            accel_body[1] + noise(),
            vb[0] + noise(),
            vb[1] + noise(),
            self.command[0],
            self.command[1],
            self.command[2],
            self.prev_action[0],
            self.prev_action[1],
            self.prev_action[2],
        ];
        self.frames.copy_within(0..FRAME * (STACK - 1), FRAME);
        self.frames[..FRAME].copy_from_slice(&frame);
    }

    /// Kinetic energy of translation and yaw (unit yaw inertia per unit mass).
    pub fn kinetic_energy(&self) -> f64 {
        0.5 * self.mass * (squared_norm(&self.vel) + self.yaw_rate * self.yaw_rate)
    }
}

impl Environment for PlanarVelocityEnv {
    fn layout(&self) -> &'static EnvLayout {
        &LAYOUT
    }

    fn reset(&mut self, rng: &mut StreamRng) {
        self.pos = [0.0; 2];
        self.vel = [0.0; 2];
        self.heading = 0.0;
        self.yaw_rate = 0.0;
        self.mass = rng.random_range(MASS_RANGE.0..MASS_RANGE.1);
        self.drag = rng.random_range(DRAG_RANGE.0..DRAG_RANGE.1);
        self.yaw_drag = rng.random_range(DRAG_RANGE.0..DRAG_RANGE.1);
        self.command = resample_command(rng);
        self.prev_action = [0.0; 3];
        self.prev_action2 = [0.0; 3];
        self.step_count = 0;
        self.push_frame([0.0; 2], rng);
        let first: [f64; FRAME] = self.frames[..FRAME].try_into().unwrap();
        for k in 1..STACK {
            self.frames[k * FRAME..(k + 1) * FRAME].copy_from_slice(&first);
        }
    }

    fn step(&mut self, action: &[f64], rng: &mut StreamRng) -> Transition {
        let a = [action[0], action[1], action[2]];
        let force = to_world(self.heading, [FORCE_GAIN * a[0], FORCE_GAIN * a[1]]);
        let old_vel = self.vel;
        for i in 0..2 {
            self.vel[i] += DT * (force[i] / self.mass - self.drag * self.vel[i]);
            self.pos[i] += DT * self.vel[i];
        }
        self.yaw_rate += DT * (TORQUE_GAIN * a[2] / self.mass - self.yaw_drag * self.yaw_rate);
        self.heading = wrap_angle(self.heading + DT * self.yaw_rate);
        let accel_world = [(self.vel[0] - old_vel[0]) / DT, (self.vel[1] - old_vel[1]) / DT];
        let accel_body = to_body(self.heading, accel_world);

        let vb = self.body_velocity();
        let terms = vec![
            tracking_reward(&vb, &self.command[..2], TRACKING_SIGMA),
            tracking_reward(&[self.yaw_rate], &self.command[2..], TRACKING_SIGMA),
            action_smoothness_penalty(&a, &self.prev_action, &self.prev_action2),
            squared_norm(&vb) + self.yaw_rate * self.yaw_rate,
        ];
        let reward = weighted_sum(LAYOUT.term_weights, &terms);

        self.prev_action2 = self.prev_action;
        self.prev_action = a;
        self.step_count += 1;
        if self.step_count == COMMAND_RESAMPLE_STEP {
            self.command = resample_command(rng);
        }
        self.push_frame(accel_body, rng);

        let finite = self.vel.iter().chain(&[self.yaw_rate, self.heading]).all(|x| x.is_finite());
        let terminated = !finite || squared_norm(&self.vel).sqrt() > SPEED_LIMIT;
        Transition {
            reward,
            terms,
            terminated,
            truncated: !terminated && self.step_count >= LAYOUT.horizon,
        }
    }

    fn state_vector(&self, out: &mut [f64]) {
        let p = LAYOUT.proprio_dim();
        out[..p].copy_from_slice(&self.frames);
        let vb = self.body_velocity();
        out[p..].copy_from_slice(&[vb[0], vb[1], self.mass, self.drag]);
    }

    fn policy_vector(&self, out: &mut [f64]) {
        let p = LAYOUT.proprio_dim();
        out[..p].copy_from_slice(&self.frames);
        out[p..].fill(0.0);
    }

    fn save(&self) -> Vec<f64> {
        let mut s = Vec::with_capacity(STATE_WORDS);
        s.extend_from_slice(&self.pos);
        s.extend_from_slice(&self.vel);
        s.extend_from_slice(&[self.heading, self.yaw_rate, self.mass, self.drag, self.yaw_drag]);
        s.extend_from_slice(&self.command);
        s.extend_from_slice(&self.prev_action);
        s.extend_from_slice(&self.prev_action2);
        s.push(self.step_count as f64);
        s.extend_from_slice(&self.frames);
        s
    }

    fn load(&mut self, s: &[f64]) -> Result<()> {
        check_len("planar velocity state", s, STATE_WORDS)?;
        let arr3 = |i: usize| [s[i], s[i + 1], s[i + 2]];
        self.pos = [s[0], s[1]];
        self.vel = [s[2], s[3]];
        self.heading = s[4];
        self.yaw_rate = s[5];
        self.mass = s[6];
        self.drag = s[7];
        self.yaw_drag = s[8];
        self.command = arr3(9);
        self.prev_action = arr3(12);
        self.prev_action2 = arr3(15);
        self.step_count = s[18] as u64;
        self.frames.copy_from_slice(&s[19..]);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng() -> StreamRng {
        StreamRng::seed_from_u64(3)
    }

    #[test]
    fn one_step_from_rest_with_unit_forward_force() {
        let mut env = PlanarVelocityEnv::new();
        env.mass = 1.0;
        env.drag = 0.1;
        env.step(&[1.0, 0.0, 0.0], &mut rng());
        assert!((env.vel[0] - 0.1).abs() < 1e-15);
        assert_eq!(env.vel[1], 0.0);
    }

    #[test]
    fn zero_action_from_rest_stays_at_rest() {
        let mut r = rng();
        let mut env = PlanarVelocityEnv::new();
        env.reset(&mut r);
        let cmd = env.command();
        let t = env.step(&[0.0; 3], &mut r);
        assert_eq!(env.vel, [0.0; 2]);
        let expected = (-(cmd[0] * cmd[0] + cmd[1] * cmd[1]) / (2.0 * 0.25 * 0.25)).exp();
        assert_eq!(t.terms[0], expected);
    }

    #[test]
    fn reset_accelerometer_reads_noise_only() {
        let mut r = rng();
        let mut env = PlanarVelocityEnv::new();
        env.reset(&mut r);
        let mut o = [0.0; 59];
        env.policy_vector(&mut o);
        // Noise of std 0.05 is far below 0.5 with overwhelming probability.
        assert!(o[1].abs() < 0.5 && o[2].abs() < 0.5);
        assert!(o[1] != 0.0 && o[2] != 0.0);
        for k in 1..STACK {
            assert_eq!(o[..FRAME], o[k * FRAME..(k + 1) * FRAME]);
        }
    }

    #[test]
    fn command_channels_equal_active_command() {
        let mut r = rng();
        let mut env = PlanarVelocityEnv::new();
        env.reset(&mut r);
        for _ in 0..260 {
            env.step(&[0.3, -0.2, 0.1], &mut r);
            let mut o = [0.0; 59];
            env.policy_vector(&mut o);
            assert_eq!(o[5..8], env.command());
        }
    }

    #[test]
    fn command_resamples_only_at_the_mid_episode_step() {
        let mut r = rng();
        let mut env = PlanarVelocityEnv::new();
        env.reset(&mut r);
        let first = env.command();
        let mut changes = vec![];
        let mut last = first;
        for _ in 0..499 {
            env.step(&[0.0; 3], &mut r);
            if env.command() != last {
                changes.push(env.step_count());
                last = env.command();
            }
        }
        assert_eq!(changes, vec![COMMAND_RESAMPLE_STEP]);
    }

    #[test]
    fn command_draws_stay_in_range() {
        let mut r = rng();
        for _ in 0..10_000 {
            let c = resample_command(&mut r);
            assert!(c[0] >= -0.5 && c[0] < 1.0);
            assert!(c[1] >= -0.3 && c[1] < 0.3);
            assert!(c[2] >= -1.0 && c[2] < 1.0);
        }
    }

    #[test]
    fn kinetic_energy_never_grows_without_action() {
        let mut r = rng();
        let mut env = PlanarVelocityEnv::new();
        env.reset(&mut r);
        for _ in 0..40 {
            env.step(&[1.0, -1.0, 1.0], &mut r);
        }
        let mut e = env.kinetic_energy();
        for _ in 0..300 {
            env.step(&[0.0; 3], &mut r);
            let next = env.kinetic_energy();
            assert!(next <= e);
            e = next;
        }
    }

    #[test]
    fn horizon_truncates() {
        let mut r = rng();
        let mut env = PlanarVelocityEnv::new();
        env.reset(&mut r);
        for i in 1..=500 {
            let t = env.step(&[0.0; 3], &mut r);
            assert_eq!(t.truncated, i == 500);
            assert!(!t.terminated);
        }
    }

    #[test]
    fn save_load_round_trip() {
        let mut r = rng();
        let mut env = PlanarVelocityEnv::new();
        env.reset(&mut r);
        env.step(&[0.5, 0.5, -0.5], &mut r);
        let mut other = PlanarVelocityEnv::new();
        other.load(&env.save()).unwrap();
        assert_eq!(other, env);
        assert!(other.load(&[0.0; 3]).is_err());
    }
}
