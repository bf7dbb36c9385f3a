use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::agent::{gae, gaussian_log_prob, standardize, ActorCritic, RewardNormalizer};
use crate::diffcore::Graph;
use crate::envs::{Observation, VecEnv};
use crate::error::{Error, Result};
use crate::rng::StreamRng;

/// Fixed-horizon transitions from all instances. Flat arrays use row
/// `t * envs + e`.
#[derive(Debug, Clone)]
pub struct RolloutBatch {
    pub steps: usize,
    pub envs: usize,
    pub policy_input: Array2<f32>,
    pub state: Array2<f32>,
    /// Sampled (unclipped) actions.
    pub actions: Array2<f32>,
    pub log_prob: Array1<f32>,
    pub value: Array1<f32>,
    pub mean: Array2<f32>,
    /// Log-std in force during collection.
    pub log_std: Vec<f32>,
    /// Normalized rewards with truncation bootstrap folded in, `[steps, envs]`.
    pub reward: Array2<f64>,
    pub done: Array2<bool>,
    pub bootstrap: Array1<f64>,
    pub advantage: Array1<f64>,
    pub returns: Array1<f64>,
    /// Raw (unnormalized) per-step rewards, for logging.
    pub raw_reward: Array2<f64>,
    /// Sum over all steps of each unweighted reward term.
    pub term_sums: Vec<f64>,
    pub completed_returns: Vec<f64>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.steps * self.envs
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Rows with at least `k` further steps in the same episode and
    /// rollout, as flat indices of their first step.
    pub fn window_starts(&self, k: usize) -> Vec<usize> {
        let mut out = vec![];
        if k >= self.steps {
            return out;
        }
        for t in 0..self.steps - k {
            for e in 0..self.envs {
                if (t..t + k).all(|s| !self.done[[s, e]]) {
                    out.push(t * self.envs + e);
                }
            }
        }
        out
    }

    /// GAE, then standardize advantages over the whole batch.
    pub fn compute_advantages(&mut self, gamma: f64, lambda: f64) -> Result<()> {
        let values = self
            .value
            .mapv(f64::from)
            .into_shape_with_order((self.steps, self.envs))
            .map_err(|e| Error::Runtime(e.to_string()))?;
        let (adv, ret) = gae(
            self.reward.view(),
            values.view(),
            self.done.view(),
            self.bootstrap.view(),
            gamma,
            lambda,
        )?;
        let mut adv: Vec<f64> = adv.iter().copied().collect();
        standardize(&mut adv);
        self.advantage = Array1::from(adv);
        self.returns = Array1::from_iter(ret.iter().copied());
        Ok(())
    }
}

/// Log-probabilities of `actions` under `N(mean, exp(log_std))`, evaluated
/// through the same graph ops as the training loss.
pub fn log_prob_rows(mean: &Array2<f32>, log_std: &[f32], actions: &Array2<f32>) -> Result<Array1<f32>> {
    let mut g = Graph::<f32>::new();
    let m = g.constant(mean.clone());
    let ls = g.constant(Array2::from_shape_vec((1, log_std.len()), log_std.to_vec()).expect("1 x k"));
    let a = g.constant(actions.clone());
    let lp = gaussian_log_prob(&mut g, m, ls, a)?;
    Ok(g.value(lp).column(0).to_owned())
}

/// Step the environments for `horizon` steps with actions sampled from the
/// policy. `obs` is advanced in place.
pub fn collect_rollouts(
    envs: &mut VecEnv,
    obs: &mut Observation,
    agent: &ActorCritic<f32>,
    normalizer: &mut RewardNormalizer,
    action_rng: &mut StreamRng,
    horizon: usize,
    gamma: f64,
) -> Result<RolloutBatch> {
    let layout = envs.layout();
    let (n, d, k) = (envs.len(), layout.state_dim, layout.action_dim);
    let rows = horizon * n;
    let nt = layout.term_names.len();
    let mut batch = RolloutBatch {
        steps: horizon,
        envs: n,
        policy_input: Array2::zeros((rows, d)),
        state: Array2::zeros((rows, d)),
        actions: Array2::zeros((rows, k)),
        log_prob: Array1::zeros(rows),
        value: Array1::zeros(rows),
        mean: Array2::zeros((rows, k)),
        log_std: agent.log_std.values.clone(),
        reward: Array2::zeros((horizon, n)),
        done: Array2::from_elem((horizon, n), false),
        bootstrap: Array1::zeros(n),
        advantage: Array1::zeros(rows),
        returns: Array1::zeros(rows),
        raw_reward: Array2::zeros((horizon, n)),
        term_sums: vec![0.0; nt],
        completed_returns: vec![],
    };
    for t in 0..horizon {
        let (mean, std) = agent.policy_forward(obs.policy.view())?;
        let value = agent.value_forward(obs.state.view())?;
        let mut actions = mean.clone();
        for row in actions.rows_mut() {
            for (a, s) in row.into_iter().zip(&std) {
                let z: f64 = action_rng.sample(StandardNormal);
                *a += s * z as f32;
            }
        }
        let lp = log_prob_rows(&mean, &batch.log_std, &actions)?;
        let step = envs.step(actions.view())?;

        let dones: Vec<bool> = (0..n).map(|i| step.done(i)).collect();
        let scaled = normalizer.normalize(&step.reward, &dones);
        let truncated: Vec<usize> = (0..n).filter(|&i| step.truncated[i]).collect();
        let mut rewards = scaled;
        if !truncated.is_empty() {
            let finals = step.final_state.select(Axis(0), &truncated);
            let v = agent.value_forward(finals.view())?;
            for (j, &i) in truncated.iter().enumerate() {
                rewards[i] += gamma * f64::from(v[[j, 0]]);
            }
        }

        let r0 = t * n;
        batch.policy_input.slice_mut(ndarray::s![r0..r0 + n, ..]).assign(&obs.policy);
        batch.state.slice_mut(ndarray::s![r0..r0 + n, ..]).assign(&obs.state);
        batch.actions.slice_mut(ndarray::s![r0..r0 + n, ..]).assign(&actions);
        batch.mean.slice_mut(ndarray::s![r0..r0 + n, ..]).assign(&mean);
        batch.log_prob.slice_mut(ndarray::s![r0..r0 + n]).assign(&lp);
        batch.value.slice_mut(ndarray::s![r0..r0 + n]).assign(&value.column(0));
        for i in 0..n {
            batch.reward[[t, i]] = rewards[i];
            batch.raw_reward[[t, i]] = step.reward[i];
            batch.done[[t, i]] = dones[i];
        }
        for (s, col) in batch.term_sums.iter_mut().zip(step.terms.columns()) {
            *s += col.sum();
        }
        batch
            .completed_returns
            .extend(step.completed.iter().map(|c| c.total_reward));
        *obs = step.obs;
    }
    let v = agent.value_forward(obs.state.view())?;
    batch.bootstrap = v.column(0).mapv(f64::from);
    Ok(batch)
}
