use std::sync::Arc;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::{ChainMimicEnv, EnvKind, EnvLayout, Environment, PlanarVelocityEnv, ReferenceLibrary};
use crate::diffcore::{ArrayData, ArrayFile};
use crate::error::{Error, Result};
use crate::rng::{instance_stream, load_rng, save_rng, StreamRng, RNG_STATE_WORDS};

/// Environment section of the experiment config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub name: EnvKind,
    pub num_envs: usize,
    pub reference_seed: u64,
    pub reference_clips: usize,
    pub reference_frames: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            name: EnvKind::PlanarVelocity,
            num_envs: 64,
            reference_seed: 42,
            reference_clips: 8,
            reference_frames: 300,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_envs < 1 {
            return Err(Error::config("env.num_envs", "must be >= 1"));
        }
        if self.name == EnvKind::ChainMimic {
            if self.reference_clips < 1 {
                return Err(Error::config("env.reference_clips", "must be >= 1"));
            }
            if self.reference_frames < 2 {
                return Err(Error::config("env.reference_frames", "must be >= 2"));
            }
        }
        Ok(())
    }

    pub fn layout(&self) -> &'static EnvLayout {
        self.name.layout()
    }
}

/// Batched observation: one row per instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    /// Zero-padded proprioceptive input, same width as `state`.
    pub policy: Array2<f32>,
    /// Full privileged state.
    pub state: Array2<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSummary {
    pub instance: usize,
    pub total_reward: f64,
    pub length: u64,
}

#[derive(Debug, Clone)]
pub struct VecStep {
    /// Observations after any automatic reset.
    pub obs: Observation,
    pub reward: Vec<f64>,
    /// Unweighted reward terms, `[instances, terms]`.
    pub terms: Array2<f64>,
    pub terminated: Vec<bool>,
    pub truncated: Vec<bool>,
    /// Privileged state reached by the step, before any reset.
    pub final_state: Array2<f32>,
    pub completed: Vec<EpisodeSummary>,
}

impl VecStep {
    pub fn done(&self, i: usize) -> bool {
        self.terminated[i] || self.truncated[i]
    }
}

/// Independent instances stepped in lockstep, each with its own rng stream,
/// resetting automatically when an episode ends.
pub struct VecEnv {
    kind: EnvKind,
    envs: Vec<Box<dyn Environment>>,
    rngs: Vec<StreamRng>,
    episode_reward: Vec<f64>,
    episode_length: Vec<u64>,
    scratch: Vec<f64>,
}

impl VecEnv {
    pub fn new(config: &EnvConfig) -> Result<Self> {
        config.validate()?;
        let envs: Vec<Box<dyn Environment>> = match config.name {
            EnvKind::PlanarVelocity => (0..config.num_envs)
                .map(|_| Box::new(PlanarVelocityEnv::new()) as Box<dyn Environment>)
                .collect(),
            EnvKind::ChainMimic => {
                let lib = Arc::new(ReferenceLibrary::generate(
                    config.reference_seed,
                    config.reference_clips,
                    config.reference_frames,
                )?);
                (0..config.num_envs)
                    .map(|_| Box::new(ChainMimicEnv::new(lib.clone())) as Box<dyn Environment>)
                    .collect()
            }
        };
        let n = envs.len();
        Ok(VecEnv {
            kind: config.name,
            envs,
            rngs: (0..n).map(|i| instance_stream(0, i)).collect(),
            episode_reward: vec![0.0; n],
            episode_length: vec![0; n],
            scratch: vec![0.0; config.name.layout().state_dim],
        })
    }

    pub fn kind(&self) -> EnvKind {
        self.kind
    }

    pub fn layout(&self) -> &'static EnvLayout {
        self.kind.layout()
    }

    pub fn len(&self) -> usize {
        self.envs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.envs.is_empty()
    }

    /// Reseed every instance from `seed` and start fresh episodes.
    pub fn reset(&mut self, seed: u64) -> Observation {
        for (i, (env, rng)) in self.envs.iter_mut().zip(&mut self.rngs).enumerate() {
            *rng = instance_stream(seed, i);
            env.reset(rng);
        }
        self.episode_reward.fill(0.0);
        self.episode_length.fill(0);
        self.observe()
    }

    pub fn observe(&mut self) -> Observation {
        let n = self.len();
        let dim = self.layout().state_dim;
        let mut policy = Array2::zeros((n, dim));
        let mut state = Array2::zeros((n, dim));
        for i in 0..n {
            self.envs[i].policy_vector(&mut self.scratch);
            for (o, &v) in policy.row_mut(i).iter_mut().zip(&self.scratch) {
                *o = v as f32;
            }
            self.fill_state(i, &mut state);
        }
        Observation { policy, state }
    }

    fn fill_state(&mut self, i: usize, out: &mut Array2<f32>) {
        self.envs[i].state_vector(&mut self.scratch);
        for (o, &v) in out.row_mut(i).iter_mut().zip(&self.scratch) {
            *o = v as f32;
        }
    }

    /// Advance every instance by one step. Actions are clipped to [-1, 1];
    /// a non-finite action is an error and leaves all instances untouched.
    pub fn step(&mut self, actions: ArrayView2<f32>) -> Result<VecStep> {
        let layout = self.layout();
        let (n, k) = (self.len(), layout.action_dim);
        if actions.dim() != (n, k) {
            return Err(Error::shape("actions", &[n, k], actions.shape()));
        }
        if let Some(pos) = actions.iter().position(|a| !a.is_finite()) {
            return Err(Error::NonFinite(format!(
                "action for instance {} is not finite",
                pos / k
            )));
        }
        let nt = layout.term_names.len();
        let mut out = VecStep {
            obs: Observation {
                policy: Array2::zeros((0, 0)),
                state: Array2::zeros((0, 0)),
            },
            reward: Vec::with_capacity(n),
            terms: Array2::zeros((n, nt)),
            terminated: Vec::with_capacity(n),
            truncated: Vec::with_capacity(n),
            final_state: Array2::zeros((n, layout.state_dim)),
            completed: vec![],
        };
        let mut action = vec![0.0f64; k];
        for i in 0..n {
            for (a, &x) in action.iter_mut().zip(actions.row(i)) {
                *a = (x as f64).clamp(-1.0, 1.0);
            }
            let t = self.envs[i].step(&action, &mut self.rngs[i]);
            self.fill_state(i, &mut out.final_state);
            self.episode_reward[i] += t.reward;
            self.episode_length[i] += 1;
            if t.terminated || t.truncated {
                out.completed.push(EpisodeSummary {
                    instance: i,
                    total_reward: self.episode_reward[i],
                    length: self.episode_length[i],
                });
                self.episode_reward[i] = 0.0;
                self.episode_length[i] = 0;
                self.envs[i].reset(&mut self.rngs[i]);
            }
            out.reward.push(t.reward);
            out.terms.row_mut(i).assign(&ndarray::aview1(&t.terms));
            out.terminated.push(t.terminated);
            out.truncated.push(t.truncated);
        }
        out.obs = self.observe();
        Ok(out)
    }

    /// Store instance states, rng streams and episode accumulators.
    pub fn write_state(&self, file: &mut ArrayFile, prefix: &str) -> Result<()> {
        let n = self.len();
        let states: Vec<Vec<f64>> = self.envs.iter().map(|e| e.save()).collect();
        let words = states[0].len();
        file.insert(
            format!("{prefix}states"),
            vec![n, words],
            ArrayData::F64(states.concat()),
        )?;
        let rngs: Vec<u64> = self.rngs.iter().flat_map(save_rng).collect();
        file.insert(format!("{prefix}rng"), vec![n, RNG_STATE_WORDS], ArrayData::U64(rngs))?;
        file.insert(
            format!("{prefix}episode_reward"),
            vec![n],
            ArrayData::F64(self.episode_reward.clone()),
        )?;
        file.insert(
            format!("{prefix}episode_length"),
            vec![n],
            ArrayData::U64(self.episode_length.clone()),
        )?;
        Ok(())
    }

    pub fn read_state(&mut self, file: &ArrayFile, prefix: &str) -> Result<()> {
        let n = self.len();
        let (shape, states) = file.f64_any(&format!("{prefix}states"))?;
        if shape.len() != 2 || shape[0] != n {
            return Err(Error::shape("env states", &[n, 0], shape));
        }
        let words = shape[1];
        let rngs = file.u64(&format!("{prefix}rng"), &[n, RNG_STATE_WORDS])?;
        let reward = file.f64(&format!("{prefix}episode_reward"), &[n])?;
        let length = file.u64(&format!("{prefix}episode_length"), &[n])?;
        for i in 0..n {
            self.envs[i].load(&states[i * words..(i + 1) * words])?;
            self.rngs[i] = load_rng(&rngs[i * RNG_STATE_WORDS..(i + 1) * RNG_STATE_WORDS])?;
        }
        self.episode_reward.copy_from_slice(reward);
        self.episode_length.copy_from_slice(length);
        Ok(())
    }
}
