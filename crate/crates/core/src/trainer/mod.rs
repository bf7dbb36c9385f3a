//! The outer learning loop: rollouts, PPO epochs with the auxiliary SRL
//! term folded into each gradient step, metrics and checkpoints.

mod checkpoint;
mod config;
mod eval;
mod metrics;
mod rollout;

use std::path::PathBuf;
use std::time::Instant;

use ndarray::{Array2, Axis};
use rand::seq::{index, SliceRandom};
use rand::Rng;

use crate::agent::{adapt_learning_rate, gaussian_kl, ppo_loss, ActorCritic, PpoMinibatch, RewardNormalizer};
use crate::diffcore::{add_scaled_params, clip_global_norm, global_norm, Adam, EmaShadow, Graph, Parameters};
use crate::envs::{EnvConfig, Observation, VecEnv};
use crate::error::{Error, Result};
use crate::rng::{mix64, stream, Stream, StreamRng};
use crate::srl::{embedding_dim_stds, srl_loss, EncoderTarget, SprWindows, SrlBatch, SrlMethod, SrlModules};

pub use checkpoint::{checkpoint_path, latest_checkpoint_path, load_agent};
pub use config::{apply_override, ExperimentConfig, IntervalUnit, LoggingConfig, TrainerSection};
pub use eval::{evaluate, evaluate_random, EvalSummary, TermStats};
pub use metrics::{read_metrics, MetricsRecord, MetricsWriter};
pub use rollout::{collect_rollouts, log_prob_rows, RolloutBatch};

/// File name of the resolved config echoed into every run directory.
pub const RESOLVED_CONFIG: &str = "resolved-config.json";

/// Whether the SRL objective contributes at `counter` (iteration or
/// gradient-step index, 1-based) under interval `interval`.
pub fn srl_active(method: SrlMethod, counter: u64, interval: u64) -> bool {
    method != SrlMethod::None && interval > 0 && counter % interval == 0
}

/// `ceil(proportion * n)` distinct indices from `0..n`, in random order.
pub fn subsample<R: Rng + ?Sized>(n: usize, proportion: f64, rng: &mut R) -> Vec<usize> {
    let count = ((proportion * n as f64).ceil() as usize).min(n);
    index::sample(rng, n, count).into_vec()
}

/// Splits `0..len` into `parts` contiguous, near-equal ranges.
fn chunk_bounds(len: usize, parts: usize, i: usize) -> std::ops::Range<usize> {
    (i * len / parts)..((i + 1) * len / parts)
}

fn select_rows(a: &Array2<f32>, rows: &[usize]) -> Array2<f32> {
    a.select(Axis(0), rows)
}

fn column(values: impl Iterator<Item = f32>) -> Array2<f32> {
    let v: Vec<f32> = values.collect();
    let n = v.len();
    Array2::from_shape_vec((n, 1), v).expect("n x 1")
}

struct TrainerRngs {
    action: StreamRng,
    shuffle: StreamRng,
    augment: StreamRng,
    subsample: StreamRng,
}

/// Per-minibatch outcome, folded into the iteration record.
#[derive(Default)]
struct StepStats {
    policy_loss: f64,
    value_loss: f64,
    entropy: f64,
    kl: f64,
    grad_norm: f64,
    srl_loss: Option<f64>,
    srl_grad_norm: Option<f64>,
}

/// One training run. Owns environments, networks, optimizers and every
/// random stream, so two trainers built from the same config evolve
/// identically.
pub struct Trainer {
    config: ExperimentConfig,
    envs: VecEnv,
    obs: Observation,
    agent: ActorCritic<f32>,
    agent_opt: Adam<f32>,
    srl: SrlModules<f32>,
    srl_opt: Adam<f32>,
    target: Option<EmaShadow<f32>>,
    normalizer: RewardNormalizer,
    mask: Vec<usize>,
    learning_rate: f64,
    iteration: u64,
    gradient_steps: u64,
    consecutive_skips: u32,
    rngs: TrainerRngs,
    probe: Array2<f32>,
    elapsed_before: f64,
    started: Instant,
}

impl Trainer {
    pub fn new(mut config: ExperimentConfig) -> Result<Self> {
        config.resolve();
        config.validate()?;
        let seed = config.trainer.seed;
        let mut envs = VecEnv::new(&config.env)?;
        let layout = envs.layout();
        let (d, k) = (layout.state_dim, layout.action_dim);
        let obs = envs.reset(mix64(seed ^ mix64(Stream::Env as u64 + 1)));

        let agent = ActorCritic::init(&config.agent, d, k, &mut stream(seed, Stream::Init));
        let srl = SrlModules::init(
            &config.srl,
            config.agent.latent_dim,
            d,
            k,
            &mut stream(seed, Stream::SrlInit),
        );
        let target = match config.srl.method {
            SrlMethod::Spr => Some(EmaShadow::new(&agent.policy_encoder, config.srl.ema_tau)?),
            _ => None,
        };
        let probe = build_probe(&config.env, config.logging.probe_size, seed)?;
        Ok(Trainer {
            agent_opt: Adam::new(&agent),
            srl_opt: Adam::new(&srl),
            normalizer: RewardNormalizer::new(envs.len(), config.agent.gamma),
            mask: layout.mask_indices(),
            learning_rate: config.agent.learning_rate,
            iteration: 0,
            gradient_steps: 0,
            consecutive_skips: 0,
            rngs: TrainerRngs {
                action: stream(seed, Stream::Action),
                shuffle: stream(seed, Stream::Shuffle),
                augment: stream(seed, Stream::Augment),
                subsample: stream(seed, Stream::Subsample),
            },
            config,
            envs,
            obs,
            agent,
            srl,
            target,
            probe,
            elapsed_before: 0.0,
            started: Instant::now(),
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn agent(&self) -> &ActorCritic<f32> {
        &self.agent
    }

    pub fn srl_modules(&self) -> &SrlModules<f32> {
        &self.srl
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn gradient_steps(&self) -> u64 {
        self.gradient_steps
    }

    pub fn normalizer(&self) -> &RewardNormalizer {
        &self.normalizer
    }

    /// Fixed policy-input batch used for the embedding metrics.
    pub fn probe(&self) -> &Array2<f32> {
        &self.probe
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn is_finished(&self) -> bool {
        self.iteration >= self.config.trainer.max_iterations
    }

    /// Encoder the SRL objective shapes.
    fn shaped_encoder(&self) -> &crate::diffcore::MlpParams<f32> {
        match self.config.srl.target {
            EncoderTarget::PolicyEncoder => &self.agent.policy_encoder,
            EncoderTarget::ValueEncoder => &self.agent.value_encoder,
        }
    }

    /// Per-dimension std of the normalized probe embeddings.
    pub fn probe_embedding_stds(&self) -> Result<Vec<f64>> {
        let z = self.shaped_encoder().forward(self.probe.view())?;
        Ok(embedding_dim_stds(&z.mapv(f64::from)))
    }

    /// Fresh SRL rows for one epoch, split to match the minibatches.
    fn srl_chunks(&mut self, batch: &RolloutBatch, parts: usize) -> Vec<Vec<usize>> {
        let pool: Vec<usize> = match self.config.srl.method {
            SrlMethod::Spr => batch.window_starts(self.config.srl.spr_steps),
            _ => (0..batch.len()).collect(),
        };
        let picks = subsample(pool.len(), self.config.trainer.data_proportion, &mut self.rngs.subsample);
        (0..parts)
            .map(|i| picks[chunk_bounds(picks.len(), parts, i)].iter().map(|&j| pool[j]).collect())
            .collect()
    }

    fn srl_batch(&self, batch: &RolloutBatch, rows: &[usize]) -> SrlBatch<f32> {
        let windows = (self.config.srl.method == SrlMethod::Spr).then(|| {
            let k = self.config.srl.spr_steps;
            let n = batch.envs;
            let clipped = batch.actions.mapv(|a| a.clamp(-1.0, 1.0));
            let mut obs = Vec::with_capacity(k + 1);
            let mut actions = Vec::with_capacity(k);
            for step in 0..=k {
                let idx: Vec<usize> = rows.iter().map(|&r| r + step * n).collect();
                obs.push(select_rows(&batch.policy_input, &idx));
                if step < k {
                    actions.push(select_rows(&clipped, &idx));
                }
            }
            SprWindows { obs, actions }
        });
        SrlBatch {
            inputs: select_rows(&batch.policy_input, rows),
            states: select_rows(&batch.state, rows),
            windows,
        }
    }

    fn ppo_minibatch(batch: &RolloutBatch, rows: &[usize]) -> PpoMinibatch<f32> {
        PpoMinibatch {
            policy_input: select_rows(&batch.policy_input, rows),
            state: select_rows(&batch.state, rows),
            actions: select_rows(&batch.actions, rows),
            old_log_prob: column(rows.iter().map(|&r| batch.log_prob[r])),
            old_value: column(rows.iter().map(|&r| batch.value[r])),
            advantage: column(rows.iter().map(|&r| batch.advantage[r] as f32)),
            returns: column(rows.iter().map(|&r| batch.returns[r] as f32)),
        }
    }

    /// One optimizer step. `Ok(None)` means the step was skipped because a
    /// loss or gradient was non-finite.
    fn update_step(&mut self, batch: &RolloutBatch, rows: &[usize], srl_rows: Option<&[usize]>) -> Result<Option<StepStats>> {
        let cfg = &self.config.agent;
        let lambda = self.config.srl.lambda();
        let mb = Self::ppo_minibatch(batch, rows);
        let srl_batch = srl_rows.filter(|r| !r.is_empty()).map(|r| self.srl_batch(batch, r));

        let (mut agent_grads, srl_grads, mut stats) = {
            let mut g = Graph::replayable();
            let nodes = self.agent.register(&mut g);
            let loss = ppo_loss(&mut g, &nodes, &mb, cfg.clip_ratio, cfg.value_clip, cfg.value_coef, cfg.entropy_coef)?;
            let mut stats = StepStats {
                policy_loss: g.scalar(loss.policy) as f64,
                value_loss: g.scalar(loss.value) as f64,
                entropy: g.scalar(loss.entropy) as f64,
                ..StepStats::default()
            };
            let mut grads = g.backward(loss.total)?;
            let mut agent_grads = ActorCritic::gradients(&nodes, &mut grads);

            let old_mean = select_rows(&batch.mean, rows).mapv(f64::from);
            let old_ls: Vec<f64> = batch.log_std.iter().map(|&v| v as f64).collect();
            let new_mean = g.value(loss.mean).mapv(f64::from);
            let new_ls: Vec<f64> = self.agent.log_std.values.iter().map(|&v| v as f64).collect();
            stats.kl = gaussian_kl(&old_mean, &old_ls, &new_mean, &new_ls);

            let mut srl_grads = None;
            if let Some(sb) = &srl_batch {
                let refs = self.srl.register(&mut g);
                let target = self.target.as_ref().map(|t| g.register(t.params()));
                let encoder = match self.config.srl.target {
                    EncoderTarget::PolicyEncoder => nodes.policy_encoder,
                    EncoderTarget::ValueEncoder => nodes.value_encoder,
                };
                let l = srl_loss(&mut g, &self.config.srl, encoder, &refs, target, &self.mask, sb, &mut self.rngs.augment)?;
                stats.srl_loss = Some(g.scalar(l) as f64);
                // At lambda = 0 the RL gradients stay bit-identical to a run
                // without SRL, so skip the add entirely.
                if lambda != 0.0 {
                    let mut sg = g.backward(l)?;
                    let mut a = ActorCritic::gradients(&nodes, &mut sg);
                    let mut s = SrlModules::gradients(&refs, &mut sg);
                    a.scale_all(lambda as f32);
                    s.scale_all(lambda as f32);
                    stats.srl_grad_norm = Some(global_norm::<f32>(&[&a, &s]));
                    add_scaled_params(&mut agent_grads, &a, 1.0);
                    srl_grads = Some(s);
                }
            }
            (agent_grads, srl_grads, stats)
        };

        let finite = [stats.policy_loss, stats.value_loss, stats.entropy, stats.srl_loss.unwrap_or(0.0)]
            .iter()
            .all(|v| v.is_finite())
            && agent_grads.is_finite()
            && srl_grads.as_ref().is_none_or(|s| s.is_finite());
        if !finite {
            self.consecutive_skips += 1;
            if self.consecutive_skips >= self.config.trainer.max_consecutive_skips {
                return Err(Error::NonFinite(format!(
                    "{} consecutive updates at iteration {}; aborting",
                    self.consecutive_skips, self.iteration
                )));
            }
            return Ok(None);
        }
        self.consecutive_skips = 0;

        let max_norm = cfg.max_grad_norm;
        let mut srl_grads = srl_grads;
        stats.grad_norm = match srl_grads.as_mut() {
            Some(s) => clip_global_norm::<f32>(&mut [&mut agent_grads, s], max_norm),
            None => clip_global_norm::<f32>(&mut [&mut agent_grads], max_norm),
        };
        self.agent_opt.step(&mut self.agent, &agent_grads, self.learning_rate)?;
        if let Some(s) = &srl_grads {
            self.srl_opt.step(&mut self.srl, s, self.learning_rate)?;
        }
        self.agent.clamp_log_std(cfg.log_std_min, cfg.log_std_max);
        if let Some(t) = self.target.as_mut() {
            t.update(&self.agent.policy_encoder)?;
        }
        Ok(Some(stats))
    }

    /// Collect one rollout and run the PPO epochs over it.
    pub fn train_iteration(&mut self) -> Result<MetricsRecord> {
        self.iteration += 1;
        let it = self.iteration;
        let (gamma, gae_lambda) = (self.config.agent.gamma, self.config.agent.gae_lambda);
        let mut batch = collect_rollouts(
            &mut self.envs,
            &mut self.obs,
            &self.agent,
            &mut self.normalizer,
            &mut self.rngs.action,
            self.config.trainer.rollout_length,
            gamma,
        )?;
        batch.compute_advantages(gamma, gae_lambda)?;

        let method = self.config.srl.method;
        let interval = self.config.trainer.srl_interval;
        let per_step = self.config.trainer.srl_interval_unit == IntervalUnit::GradientStep;
        let iteration_active = !per_step && srl_active(method, it, interval);
        let needs_srl_rows = method != SrlMethod::None && (per_step || iteration_active);
        let (epochs, parts) = (self.config.agent.epochs, self.config.agent.minibatches);

        let mut steps: Vec<StepStats> = vec![];
        let mut skipped = 0u32;
        let mut kl_total = 0.0;
        let mut kl_count = 0usize;
        for _ in 0..epochs {
            let mut perm: Vec<usize> = (0..batch.len()).collect();
            perm.shuffle(&mut self.rngs.shuffle);
            let chunks = needs_srl_rows.then(|| self.srl_chunks(&batch, parts));
            let mut epoch_kl = vec![];
            for m in 0..parts {
                let rows = &perm[chunk_bounds(perm.len(), parts, m)];
                let active = if per_step {
                    srl_active(method, self.gradient_steps + 1, interval)
                } else {
                    iteration_active
                };
                let srl_rows = chunks.as_ref().filter(|_| active).map(|c| c[m].as_slice());
                match self.update_step(&batch, rows, srl_rows)? {
                    Some(s) => {
                        self.gradient_steps += 1;
                        epoch_kl.push(s.kl);
                        steps.push(s);
                    }
                    None => skipped += 1,
                }
            }
            if !epoch_kl.is_empty() {
                let kl = epoch_kl.iter().sum::<f64>() / epoch_kl.len() as f64;
                kl_total += epoch_kl.iter().sum::<f64>();
                kl_count += epoch_kl.len();
                if self.config.agent.adaptive_lr {
                    let a = &self.config.agent;
                    self.learning_rate =
                        adapt_learning_rate(self.learning_rate, kl, a.desired_kl, a.min_learning_rate, a.max_learning_rate);
                }
            }
        }

        let mean_of = |f: &dyn Fn(&StepStats) -> Option<f64>| {
            let v: Vec<f64> = steps.iter().filter_map(f).collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        };
        let stds = self.probe_embedding_stds()?;
        let layout = self.envs.layout();
        let rows = batch.len() as f64;
        let srl_updates = steps.iter().filter(|s| s.srl_loss.is_some()).count() as u32;
        let episodes = batch.completed_returns.len();
        Ok(MetricsRecord {
            iteration: it,
            wall_time: self.elapsed_before + self.started.elapsed().as_secs_f64(),
            mean_episode_reward: (episodes > 0)
                .then(|| batch.completed_returns.iter().sum::<f64>() / episodes as f64),
            episodes_completed: episodes,
            mean_step_reward: batch.raw_reward.sum() / rows,
            reward_terms: layout
                .term_names
                .iter()
                .zip(&batch.term_sums)
                .map(|(n, s)| (n.to_string(), s / rows))
                .collect(),
            policy_loss: mean_of(&|s| Some(s.policy_loss)).unwrap_or(f64::NAN),
            value_loss: mean_of(&|s| Some(s.value_loss)).unwrap_or(f64::NAN),
            entropy: mean_of(&|s| Some(s.entropy)).unwrap_or(f64::NAN),
            srl_loss: mean_of(&|s| s.srl_loss),
            mean_kl: if kl_count > 0 { kl_total / kl_count as f64 } else { 0.0 },
            learning_rate: self.learning_rate,
            srl_active: srl_updates > 0,
            srl_updates,
            srl_grad_norm: mean_of(&|s| s.srl_grad_norm).unwrap_or(0.0),
            grad_norm: mean_of(&|s| Some(s.grad_norm)).unwrap_or(0.0),
            skipped_updates: skipped,
            embedding_std: stds.iter().sum::<f64>() / stds.len().max(1) as f64,
            embedding_std_min: stds.iter().copied().fold(f64::INFINITY, f64::min),
        })
    }

    /// Run to `max_iterations`, calling `on_record` after every iteration.
    /// With an output directory configured, metrics and checkpoints are
    /// written there as well.
    pub fn run_with(&mut self, mut on_record: impl FnMut(&MetricsRecord)) -> Result<Vec<MetricsRecord>> {
        let out_dir = self.config.logging.out_dir.clone();
        let mut writer = match &out_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir.join("checkpoints")).map_err(|e| Error::io(dir, e))?;
                let cfg_path = dir.join(RESOLVED_CONFIG);
                std::fs::write(&cfg_path, self.config.to_pretty_json()).map_err(|e| Error::io(&cfg_path, e))?;
                Some(MetricsWriter::open(&dir.join("metrics.jsonl"), self.iteration)?)
            }
            None => None,
        };
        let every = self.config.trainer.checkpoint_every;
        let print_every = self.config.logging.print_every;
        let mut records = vec![];
        while !self.is_finished() {
            let r = self.train_iteration()?;
            if let Some(w) = writer.as_mut() {
                w.write(&r)?;
            }
            if let Some(dir) = &out_dir {
                if (every > 0 && r.iteration % every == 0) || self.is_finished() {
                    self.save_checkpoint(&checkpoint_path(dir, r.iteration))?;
                    self.save_checkpoint(&latest_checkpoint_path(dir))?;
                }
            }
            if print_every > 0 && r.iteration % print_every == 0 {
                println!(
                    "iter {:>5}  step_reward {:>9.4}  policy {:>8.4}  value {:>8.4}  srl {}  kl {:.4}  lr {:.2e}",
                    r.iteration,
                    r.mean_step_reward,
                    r.policy_loss,
                    r.value_loss,
                    r.srl_loss.map_or("-".to_string(), |v| format!("{v:.4}")),
                    r.mean_kl,
                    r.learning_rate
                );
            }
            on_record(&r);
            records.push(r);
        }
        Ok(records)
    }

    pub fn run(&mut self) -> Result<Vec<MetricsRecord>> {
        self.run_with(|_| {})
    }

    /// Rebuild from the latest checkpoint in `config.logging.out_dir`, or
    /// start fresh when there is none.
    pub fn resume_or_new(config: ExperimentConfig) -> Result<Self> {
        let latest = config.logging.out_dir.as_ref().map(|d| latest_checkpoint_path(d));
        match latest {
            Some(p) if p.exists() => Self::from_checkpoint(config, &p),
            _ => Self::new(config),
        }
    }

    pub fn out_dir(&self) -> Option<PathBuf> {
        self.config.logging.out_dir.clone()
    }
}

/// Fixed batch of policy inputs for the embedding-spread metric: reset
/// observations of `size` instances after a few random steps.
fn build_probe(env: &EnvConfig, size: usize, seed: u64) -> Result<Array2<f32>> {
    let cfg = EnvConfig {
        num_envs: size,
        ..env.clone()
    };
    let mut envs = VecEnv::new(&cfg)?;
    let probe_seed = mix64(seed ^ 0x5052_4f42_4500_0000);
    let mut obs = envs.reset(probe_seed);
    let mut rng = crate::rng::instance_stream(probe_seed, size);
    let k = envs.layout().action_dim;
    for _ in 0..8 {
        let a = Array2::from_shape_fn((size, k), |_| rng.random_range(-1.0f32..1.0));
        obs = envs.step(a.view())?.obs;
    }
    Ok(obs.policy)
}
