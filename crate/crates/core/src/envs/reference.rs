use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};

use super::DT;
use crate::diffcore::{ArrayData, ArrayFile};
use crate::error::{Error, Result};
use crate::rng::StreamRng;

pub const JOINTS: usize = 4;
pub const LINK_LENGTH: f64 = 0.25;
pub const AMPLITUDE: (f64, f64) = (0.1, 0.6);
pub const FREQUENCY: (f64, f64) = (0.2, 0.7);

/// Per joint: `[A1, f1, phi1, A2, f2, phi2]`.
pub type SineParams = [f64; 6];

/// Procedurally generated joint-space motion clips, fully determined by
/// `(seed, clips, frames)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceLibrary {
    seed: u64,
    clips: usize,
    frames: usize,
    params: Vec<[SineParams; JOINTS]>,
    positions: Vec<f64>,
    distances: Vec<f64>,
}

/// Planar forward kinematics of the 4-link chain rooted at the origin.
pub fn end_effector(q: &[f64]) -> [f64; 2] {
    let (mut x, mut y, mut angle) = (0.0, 0.0, 0.0);
    for &qi in q {
        angle += qi;
        x += LINK_LENGTH * angle.cos();
        y += LINK_LENGTH * angle.sin();
    }
    [x, y]
}

/// Cartesian end-effector velocity `J(q) qdot`.
pub fn end_effector_velocity(q: &[f64], qdot: &[f64]) -> [f64; 2] {
    let (mut vx, mut vy) = (0.0, 0.0);
    let (mut angle, mut rate) = (0.0, 0.0);
    for (&qi, &wi) in q.iter().zip(qdot) {
        angle += qi;
        rate += wi;
        vx -= LINK_LENGTH * angle.sin() * rate;
        vy += LINK_LENGTH * angle.cos() * rate;
    }
    [vx, vy]
}

/// Distance from the chain root to the end effector.
pub fn reach(q: &[f64]) -> f64 {
    let [x, y] = end_effector(q);
    x.hypot(y)
}

impl ReferenceLibrary {
    pub fn generate(seed: u64, clips: usize, frames: usize) -> Result<Self> {
        if clips < 1 {
            return Err(Error::config("env.reference_clips", "must be >= 1"));
        }
        if frames < 2 {
            return Err(Error::config("env.reference_frames", "must be >= 2"));
        }
        let mut rng = StreamRng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(clips);
        for _ in 0..clips {
            let mut clip = [[0.0; 6]; JOINTS];
            for joint in clip.iter_mut() {
                for term in 0..2 {
                    joint[3 * term] = rng.random_range(AMPLITUDE.0..=AMPLITUDE.1);
                    joint[3 * term + 1] = rng.random_range(FREQUENCY.0..=FREQUENCY.1);
                    joint[3 * term + 2] = rng.random_range(0.0..2.0 * PI);
                }
            }
            params.push(clip);
        }
        Self::from_params(seed, frames, params)
    }

    fn from_params(seed: u64, frames: usize, params: Vec<[SineParams; JOINTS]>) -> Result<Self> {
        let clips = params.len();
        let mut positions = Vec::with_capacity(clips * frames * JOINTS);
        let mut distances = Vec::with_capacity(clips * frames);
        for clip in &params {
            for t in 0..frames {
                let time = t as f64 * DT;
                let q: [f64; JOINTS] = std::array::from_fn(|j| {
                    let p = &clip[j];
                    p[0] * (2.0 * PI * p[1] * time + p[2]).sin()
                        + p[3] * (2.0 * PI * p[4] * time + p[5]).sin()
                });
                distances.push(reach(&q));
                positions.extend_from_slice(&q);
            }
        }
        Ok(ReferenceLibrary {
            seed,
            clips,
            frames,
            params,
            positions,
            distances,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn clips(&self) -> usize {
        self.clips
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn params(&self) -> &[[SineParams; JOINTS]] {
        &self.params
    }

    pub fn position(&self, clip: usize, frame: usize) -> &[f64] {
        let i = (clip * self.frames + frame) * JOINTS;
        &self.positions[i..i + JOINTS]
    }

    pub fn distance(&self, clip: usize, frame: usize) -> f64 {
        self.distances[clip * self.frames + frame]
    }

    pub fn to_array_file(&self) -> Result<ArrayFile> {
        let mut f = ArrayFile::new();
        f.insert("seed", vec![1], ArrayData::U64(vec![self.seed]))?;
        let flat: Vec<f64> = self.params.iter().flatten().flatten().copied().collect();
        f.insert("params", vec![self.clips, JOINTS, 6], ArrayData::F64(flat))?;
        f.insert(
            "positions",
            vec![self.clips, self.frames, JOINTS],
            ArrayData::F64(self.positions.clone()),
        )?;
        f.insert(
            "distances",
            vec![self.clips, self.frames],
            ArrayData::F64(self.distances.clone()),
        )?;
        Ok(f)
    }

    /// Rebuild from an exported file. Positions are recomputed from the stored
    /// sine parameters and must agree with the stored table.
    pub fn from_array_file(f: &ArrayFile) -> Result<Self> {
        let seed = f.u64("seed", &[1])?[0];
        let shape = f
            .get("params")
            .ok_or_else(|| Error::Format("reference file lacks 'params'".into()))?
            .shape
            .clone();
        if shape.len() != 3 || shape[1] != JOINTS || shape[2] != 6 {
            return Err(Error::shape("reference params", &[0, JOINTS, 6], &shape));
        }
        let clips = shape[0];
        let pos_shape = f
            .get("positions")
            .ok_or_else(|| Error::Format("reference file lacks 'positions'".into()))?
            .shape
            .clone();
        if pos_shape.len() != 3 || pos_shape[0] != clips || pos_shape[2] != JOINTS {
            return Err(Error::shape("reference positions", &[clips, 0, JOINTS], &pos_shape));
        }
        let frames = pos_shape[1];
        let flat = f.f64("params", &[clips, JOINTS, 6])?;
        let params = flat
            .chunks_exact(JOINTS * 6)
            .map(|c| std::array::from_fn(|j| c[j * 6..j * 6 + 6].try_into().unwrap()))
            .collect();
        let lib = Self::from_params(seed, frames, params)?;
        if f.f64("positions", &[clips, frames, JOINTS])? != lib.positions.as_slice()
            || f.f64("distances", &[clips, frames])? != lib.distances.as_slice()
        {
            return Err(Error::Format("reference tables disagree with their parameters".into()));
        }
        Ok(lib)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_array_file()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_array_file(&ArrayFile::load(path)?)
    }
}
