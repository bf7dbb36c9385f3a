use std::path::{Path, PathBuf};
use std::time::Instant;

use super::{ExperimentConfig, Trainer};
use crate::agent::ActorCritic;
use crate::diffcore::{Adam, ArrayData, ArrayFile, EmaShadow, Parameters};
use crate::error::{Error, Result};
use crate::rng::{load_rng, save_rng, RNG_STATE_WORDS};

pub fn checkpoint_path(dir: &Path, iteration: u64) -> PathBuf {
    dir.join("checkpoints").join(format!("iter-{iteration:06}.ckpt"))
}

pub fn latest_checkpoint_path(dir: &Path) -> PathBuf {
    dir.join("checkpoints").join("latest.ckpt")
}

fn write_adam<P: Parameters<f32> + ?Sized>(file: &mut ArrayFile, prefix: &str, opt: &Adam<f32>, params: &P) -> Result<()> {
    let (m, v) = opt.moments();
    for ((t, m), v) in params.tensors().iter().zip(m).zip(v) {
        file.insert(format!("{prefix}/m/{}", t.name), t.shape.clone(), ArrayData::F32(m.clone()))?;
        file.insert(format!("{prefix}/v/{}", t.name), t.shape.clone(), ArrayData::F32(v.clone()))?;
    }
    file.insert(format!("{prefix}/step"), vec![1], ArrayData::U64(vec![opt.step_count()]))
}

fn read_adam<P: Parameters<f32> + ?Sized>(file: &ArrayFile, prefix: &str, opt: &mut Adam<f32>, params: &P) -> Result<()> {
    let (mut m, mut v) = (vec![], vec![]);
    for t in params.tensors() {
        m.push(file.f32(&format!("{prefix}/m/{}", t.name), &t.shape)?.to_vec());
        v.push(file.f32(&format!("{prefix}/v/{}", t.name), &t.shape)?.to_vec());
    }
    let step = file.u64(&format!("{prefix}/step"), &[1])?[0];
    opt.restore(step, m, v)
}

/// Load only the agent from a checkpoint, validating shapes against the
/// networks `config` describes.
pub fn load_agent(config: &ExperimentConfig, path: &Path) -> Result<ActorCritic<f32>> {
    let file = ArrayFile::load(path)?;
    let layout = config.env.layout();
    let mut agent = ActorCritic::zeros(&config.agent, layout.state_dim, layout.action_dim);
    file.load_params("agent", &mut agent)?;
    Ok(agent)
}

impl Trainer {
    /// Everything needed to continue the run bit-exactly.
    pub fn to_array_file(&self) -> Result<ArrayFile> {
        let mut f = ArrayFile::new();
        f.insert_params("agent", &self.agent)?;
        f.insert_params("srl", &self.srl)?;
        if let Some(t) = &self.target {
            f.insert_params("srl_target", t.params())?;
        }
        write_adam(&mut f, "adam/agent", &self.agent_opt, &self.agent)?;
        write_adam(&mut f, "adam/srl", &self.srl_opt, &self.srl)?;
        self.normalizer.write_state(&mut f, "normalizer")?;
        self.envs.write_state(&mut f, "env")?;
        let r = &self.rngs;
        let words: Vec<u64> = [&r.action, &r.shuffle, &r.augment, &r.subsample]
            .iter()
            .flat_map(|g| save_rng(g))
            .collect();
        f.insert("rng", vec![4, RNG_STATE_WORDS], ArrayData::U64(words))?;
        f.insert(
            "counters",
            vec![3],
            ArrayData::U64(vec![self.iteration, self.gradient_steps, self.consecutive_skips as u64]),
        )?;
        let wall = self.elapsed_before + self.started.elapsed().as_secs_f64();
        f.insert("scalars", vec![2], ArrayData::F64(vec![self.learning_rate, wall]))?;
        Ok(f)
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        self.to_array_file()?.save(path)
    }

    /// Rebuild a trainer for `config` and overwrite its state from `file`.
    pub fn from_array_file(config: ExperimentConfig, f: &ArrayFile) -> Result<Self> {
        let mut t = Trainer::new(config)?;
        f.load_params("agent", &mut t.agent)?;
        f.load_params("srl", &mut t.srl)?;
        if let Some(target) = t.target.as_mut() {
            let mut shadow = target.params().clone();
            f.load_params("srl_target", &mut shadow)?;
            *target = EmaShadow::from_parts(shadow, target.tau())?;
        }
        read_adam(f, "adam/agent", &mut t.agent_opt, &t.agent)?;
        read_adam(f, "adam/srl", &mut t.srl_opt, &t.srl)?;
        t.normalizer.read_state(f, "normalizer")?;
        t.envs.read_state(f, "env")?;
        t.obs = t.envs.observe();
        let words = f.u64("rng", &[4, RNG_STATE_WORDS])?;
        let mut it = words.chunks_exact(RNG_STATE_WORDS).map(load_rng);
        let mut next = || it.next().expect("four rng states");
        t.rngs.action = next()?;
        t.rngs.shuffle = next()?;
        t.rngs.augment = next()?;
        t.rngs.subsample = next()?;
        let c = f.u64("counters", &[3])?;
        t.iteration = c[0];
        t.gradient_steps = c[1];
        t.consecutive_skips = c[2] as u32;
        let s = f.f64("scalars", &[2])?;
        t.learning_rate = s[0];
        t.elapsed_before = s[1];
        t.started = Instant::now();
        Ok(t)
    }

    pub fn from_checkpoint(config: ExperimentConfig, path: &Path) -> Result<Self> {
        Self::from_array_file(config, &ArrayFile::load(path)?)
    }
}
