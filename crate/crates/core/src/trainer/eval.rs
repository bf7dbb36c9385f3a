use std::collections::BTreeMap;

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::agent::ActorCritic;
use crate::envs::{EnvConfig, VecEnv};
use crate::error::{Error, Result};
use crate::rng::{mix64, stream, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TermStats {
    pub mean: f64,
    pub std: f64,
}

/// Per-episode statistics over a fixed number of evaluation episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub episodes: usize,
    pub mean_episode_reward: f64,
    pub std_episode_reward: f64,
    pub mean_episode_length: f64,
    /// Mean over steps of each unweighted term, then mean/std over episodes.
    pub terms: BTreeMap<String, TermStats>,
}

fn mean_std(xs: &[f64]) -> TermStats {
    let n = xs.len().max(1) as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    TermStats { mean, std: var.sqrt() }
}

/// Run one episode per instance, choosing actions with `act`.
fn run_episodes(
    env: &EnvConfig,
    episodes: usize,
    seed: u64,
    mut act: impl FnMut(&Array2<f32>) -> Result<Array2<f32>>,
) -> Result<EvalSummary> {
    if episodes == 0 {
        return Err(Error::config("episodes", "must be >= 1"));
    }
    let cfg = EnvConfig {
        num_envs: episodes,
        ..env.clone()
    };
    let mut envs = VecEnv::new(&cfg)?;
    let layout = envs.layout();
    let nt = layout.term_names.len();
    let mut obs = envs.reset(mix64(seed ^ mix64(Stream::Eval as u64 + 1)));
    let mut returns = vec![0.0; episodes];
    let mut lengths = vec![0usize; episodes];
    let mut term_sums = vec![vec![0.0; nt]; episodes];
    let mut finished = vec![false; episodes];
    while finished.iter().any(|f| !f) {
        let actions = act(&obs.policy)?;
        let step = envs.step(actions.view())?;
        for i in 0..episodes {
            if finished[i] {
                continue;
            }
            returns[i] += step.reward[i];
            lengths[i] += 1;
            for (j, s) in term_sums[i].iter_mut().enumerate() {
                *s += step.terms[[i, j]];
            }
            finished[i] = step.done(i);
        }
        obs = step.obs;
    }
    let mut terms = BTreeMap::new();
    for (j, name) in layout.term_names.iter().enumerate() {
        let per: Vec<f64> = (0..episodes).map(|i| term_sums[i][j] / lengths[i] as f64).collect();
        terms.insert(name.to_string(), mean_std(&per));
    }
    let r = mean_std(&returns);
    Ok(EvalSummary {
        episodes,
        mean_episode_reward: r.mean,
        std_episode_reward: r.std,
        mean_episode_length: lengths.iter().sum::<usize>() as f64 / episodes as f64,
        terms,
    })
}

/// Evaluate `agent` for `episodes` full episodes. Deterministic mode acts
/// with the policy mean.
pub fn evaluate(
    agent: &ActorCritic<f32>,
    env: &EnvConfig,
    episodes: usize,
    seed: u64,
    deterministic: bool,
) -> Result<EvalSummary> {
    let layout = env.layout();
    if agent.state_dim() != layout.state_dim || agent.action_dim() != layout.action_dim {
        return Err(Error::shape(
            "agent vs environment",
            &[layout.state_dim, layout.action_dim],
            &[agent.state_dim(), agent.action_dim()],
        ));
    }
    let mut rng = stream(seed, Stream::Eval);
    run_episodes(env, episodes, seed, |x| {
        let (mut mean, std) = agent.policy_forward(x.view())?;
        if !deterministic {
            for row in mean.rows_mut() {
                for (a, s) in row.into_iter().zip(&std) {
                    *a += s * rng.sample::<f32, _>(StandardNormal);
                }
            }
        }
        Ok(mean)
    })
}

/// Baseline with actions uniform in `[-1, 1]`.
pub fn evaluate_random(env: &EnvConfig, episodes: usize, seed: u64) -> Result<EvalSummary> {
    let k = env.layout().action_dim;
    let mut rng = stream(seed, Stream::Eval);
    run_episodes(env, episodes, seed, |x| {
        Ok(Array2::from_shape_fn((x.nrows(), k), |_| rng.random_range(-1.0f32..1.0)))
    })
}
