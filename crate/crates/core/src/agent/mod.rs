//! PPO actor-critic with asymmetric inputs: the policy sees the zero-masked
//! proprioceptive stack, the critic sees the full privileged state.

mod gae;
mod normalizer;
mod ppo;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{
    prefixed, Gradients, Graph, MlpParams, NodeId, ParamRef, ParamVector, Parameters, Scalar,
    TensorView,
};
use crate::error::{Error, Result};

pub use gae::{gae, gae_sequence, standardize};
pub use normalizer::RewardNormalizer;
pub use ppo::{
    adapt_learning_rate, clipped_surrogate_loss, clipped_value_loss, gaussian_entropy,
    gaussian_entropy_closed_form, gaussian_kl, gaussian_log_prob, ppo_loss, PpoLoss, PpoMinibatch,
};

/// PPO and network hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_ratio: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub value_clip: f64,
    pub learning_rate: f64,
    pub adaptive_lr: bool,
    pub desired_kl: f64,
    pub min_learning_rate: f64,
    pub max_learning_rate: f64,
    pub epochs: usize,
    pub minibatches: usize,
    pub max_grad_norm: f64,
    pub init_log_std: f64,
    pub log_std_min: f64,
    pub log_std_max: f64,
    pub encoder_hidden: Vec<usize>,
    pub latent_dim: usize,
    pub head_hidden: Vec<usize>,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_ratio: 0.2,
            entropy_coef: 0.01,
            value_coef: 1.0,
            value_clip: 0.2,
            learning_rate: 1e-3,
            adaptive_lr: true,
            desired_kl: 0.01,
            min_learning_rate: 1e-5,
            max_learning_rate: 1e-2,
            epochs: 5,
            minibatches: 4,
            max_grad_norm: 0.5,
            init_log_std: 0.0,
            log_std_min: -4.0,
            log_std_max: 2.0,
            encoder_hidden: vec![512, 256],
            latent_dim: 128,
            head_hidden: vec![128],
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |key: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::config(format!("agent.{key}"), "must lie in [0, 1]"))
            }
        };
        let positive = |key: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(format!("agent.{key}"), "must be finite and > 0"))
            }
        };
        unit("gamma", self.gamma)?;
        unit("gae_lambda", self.gae_lambda)?;
        positive("clip_ratio", self.clip_ratio)?;
        positive("value_clip", self.value_clip)?;
        positive("learning_rate", self.learning_rate)?;
        positive("desired_kl", self.desired_kl)?;
        positive("min_learning_rate", self.min_learning_rate)?;
        positive("max_grad_norm", self.max_grad_norm)?;
        if self.max_learning_rate < self.min_learning_rate {
            return Err(Error::config("agent.max_learning_rate", "must be >= agent.min_learning_rate"));
        }
        if !(self.entropy_coef >= 0.0) || !(self.value_coef >= 0.0) {
            return Err(Error::config("agent.entropy_coef / agent.value_coef", "must be >= 0"));
        }
        if self.epochs == 0 {
            return Err(Error::config("agent.epochs", "must be >= 1"));
        }
        if self.minibatches == 0 {
            return Err(Error::config("agent.minibatches", "must be >= 1"));
        }
        if !(self.log_std_min < self.log_std_max) {
            return Err(Error::config("agent.log_std_min", "must be < agent.log_std_max"));
        }
        if !(self.log_std_min..=self.log_std_max).contains(&self.init_log_std) {
            return Err(Error::config("agent.init_log_std", "must lie within the log-std clamp"));
        }
        if self.latent_dim == 0 || self.encoder_hidden.contains(&0) || self.head_hidden.contains(&0) {
            return Err(Error::config("agent.encoder_hidden / latent_dim / head_hidden", "widths must be >= 1"));
        }
        Ok(())
    }

    pub fn encoder_dims(&self, input: usize) -> Vec<usize> {
        let mut d = vec![input];
        d.extend(&self.encoder_hidden);
        d.push(self.latent_dim);
        d
    }

    pub fn head_dims(&self, output: usize) -> Vec<usize> {
        let mut d = vec![self.latent_dim];
        d.extend(&self.head_hidden);
        d.push(output);
        d
    }
}

/// Policy encoder + head with a state-independent log-std, and a separate
/// value encoder + head.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorCritic<T> {
    pub policy_encoder: MlpParams<T>,
    pub policy_head: MlpParams<T>,
    pub log_std: ParamVector<T>,
    pub value_encoder: MlpParams<T>,
    pub value_head: MlpParams<T>,
}

/// Graph handles for one registered [`ActorCritic`].
#[derive(Debug, Clone, Copy)]
pub struct AgentNodes {
    pub policy_encoder: ParamRef,
    pub policy_head: ParamRef,
    pub value_encoder: ParamRef,
    pub value_head: ParamRef,
    /// `1 x k` leaf holding the log-std.
    pub log_std: NodeId,
}

impl AgentNodes {
    pub fn policy_mean<T: Scalar>(&self, g: &mut Graph<'_, T>, x: NodeId) -> Result<NodeId> {
        let z = g.mlp(self.policy_encoder, x)?;
        g.mlp(self.policy_head, z)
    }

    pub fn value<T: Scalar>(&self, g: &mut Graph<'_, T>, s: NodeId) -> Result<NodeId> {
        let z = g.mlp(self.value_encoder, s)?;
        g.mlp(self.value_head, z)
    }
}

impl<T: Scalar> ActorCritic<T> {
    pub fn init<R: Rng + ?Sized>(
        config: &AgentConfig,
        state_dim: usize,
        action_dim: usize,
        rng: &mut R,
    ) -> Self {
        ActorCritic {
            policy_encoder: MlpParams::init(&config.encoder_dims(state_dim), 1.0, rng),
            policy_head: MlpParams::init(&config.head_dims(action_dim), 1.0, rng),
            log_std: ParamVector::new("log_std", vec![T::of(config.init_log_std); action_dim]),
            value_encoder: MlpParams::init(&config.encoder_dims(state_dim), 1.0, rng),
            value_head: MlpParams::init(&config.head_dims(1), 1.0, rng),
        }
    }

    pub fn zeros(config: &AgentConfig, state_dim: usize, action_dim: usize) -> Self {
        ActorCritic {
            policy_encoder: MlpParams::zeros(&config.encoder_dims(state_dim)),
            policy_head: MlpParams::zeros(&config.head_dims(action_dim)),
            log_std: ParamVector::new("log_std", vec![T::of(config.init_log_std); action_dim]),
            value_encoder: MlpParams::zeros(&config.encoder_dims(state_dim)),
            value_head: MlpParams::zeros(&config.head_dims(1)),
        }
    }

    pub fn zeros_like(&self) -> Self {
        ActorCritic {
            policy_encoder: self.policy_encoder.zeros_like(),
            policy_head: self.policy_head.zeros_like(),
            log_std: ParamVector::new("log_std", vec![T::zero(); self.action_dim()]),
            value_encoder: self.value_encoder.zeros_like(),
            value_head: self.value_head.zeros_like(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> ActorCritic<U> {
        ActorCritic {
            policy_encoder: self.policy_encoder.cast(),
            policy_head: self.policy_head.cast(),
            log_std: self.log_std.cast(),
            value_encoder: self.value_encoder.cast(),
            value_head: self.value_head.cast(),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.policy_encoder.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.policy_head.output_dim()
    }

    pub fn register<'p>(&'p self, g: &mut Graph<'p, T>) -> AgentNodes {
        let k = self.action_dim();
        let ls = Array2::from_shape_vec((1, k), self.log_std.values.clone()).expect("1 x k");
        AgentNodes {
            policy_encoder: g.register(&self.policy_encoder),
            policy_head: g.register(&self.policy_head),
            value_encoder: g.register(&self.value_encoder),
            value_head: g.register(&self.value_head),
            log_std: g.leaf(ls),
        }
    }

    /// Collect gradients of every group from one backward pass.
    pub fn gradients(nodes: &AgentNodes, grads: &mut Gradients<T>) -> Self {
        let log_std = match grads.node(nodes.log_std) {
            Some(g) => g.iter().copied().collect(),
            None => vec![T::zero(); grads.param(nodes.policy_head).output_dim()],
        };
        ActorCritic {
            policy_encoder: grads.take_param(nodes.policy_encoder),
            policy_head: grads.take_param(nodes.policy_head),
            log_std: ParamVector::new("log_std", log_std),
            value_encoder: grads.take_param(nodes.value_encoder),
            value_head: grads.take_param(nodes.value_head),
        }
    }

    /// Action mean and std for a batch of policy inputs.
    pub fn policy_forward(&self, x: ArrayView2<'_, T>) -> Result<(Array2<T>, Vec<T>)> {
        let z = self.policy_encoder.forward(x)?;
        let mean = self.policy_head.forward(z.view())?;
        if !mean.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("policy mean".into()));
        }
        Ok((mean, self.log_std.values.iter().map(|l| l.exp()).collect()))
    }

    /// Critic estimate per row, `B x 1`.
    pub fn value_forward(&self, s: ArrayView2<'_, T>) -> Result<Array2<T>> {
        let z = self.value_encoder.forward(s)?;
        self.value_head.forward(z.view())
    }

    pub fn clamp_log_std(&mut self, lo: f64, hi: f64) {
        let (lo, hi) = (T::of(lo), T::of(hi));
        for v in &mut self.log_std.values {
            *v = v.max(lo).min(hi);
        }
    }
}

impl<T: Scalar> Parameters<T> for ActorCritic<T> {
    fn tensors(&self) -> Vec<TensorView<'_, T>> {
        let mut out = prefixed("policy_encoder", self.policy_encoder.tensors());
        out.extend(prefixed("policy_head", self.policy_head.tensors()));
        out.extend(self.log_std.tensors());
        out.extend(prefixed("value_encoder", self.value_encoder.tensors()));
        out.extend(prefixed("value_head", self.value_head.tensors()));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = self.policy_encoder.tensors_mut();
        out.extend(self.policy_head.tensors_mut());
        out.extend(self.log_std.tensors_mut());
        out.extend(self.value_encoder.tensors_mut());
        out.extend(self.value_head.tensors_mut());
        out
    }
}
