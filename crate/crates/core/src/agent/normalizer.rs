use crate::diffcore::{ArrayData, ArrayFile};
use crate::error::Result;

/// Scales rewards by the running std of the per-environment discounted
/// return. No mean is subtracted.
///
/// Statistics are merged batch-wise (Chan et al. parallel Welford) starting
/// from a weak unit-variance prior, so the first updates stay finite.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardNormalizer {
    gamma: f64,
    count: f64,
    mean: f64,
    m2: f64,
    returns: Vec<f64>,
}

const PRIOR_COUNT: f64 = 1e-4;
const EPS: f64 = 1e-8;

impl RewardNormalizer {
    pub fn new(num_envs: usize, gamma: f64) -> Self {
        RewardNormalizer {
            gamma,
            count: PRIOR_COUNT,
            mean: 0.0,
            m2: PRIOR_COUNT,
            returns: vec![0.0; num_envs],
        }
    }

    pub fn count(&self) -> f64 {
        self.count
    }

    pub fn variance(&self) -> f64 {
        self.m2 / self.count
    }

    pub fn std(&self) -> f64 {
        (self.variance() + EPS).sqrt()
    }

    fn merge(&mut self, xs: &[f64]) {
        let n = xs.len() as f64;
        if xs.is_empty() {
            return;
        }
        let mean = xs.iter().sum::<f64>() / n;
        let m2 = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>();
        let total = self.count + n;
        let delta = mean - self.mean;
        self.mean += delta * n / total;
        self.m2 += m2 + delta * delta * self.count * n / total;
        self.count = total;
    }

    /// Fold one environment step into the statistics and return the scaled
    /// rewards. `dones` restarts the corresponding discounted returns.
    pub fn normalize(&mut self, rewards: &[f64], dones: &[bool]) -> Vec<f64> {
        for (ret, &r) in self.returns.iter_mut().zip(rewards) {
            *ret = *ret * self.gamma + r;
        }
        let snapshot = self.returns.clone();
        self.merge(&snapshot);
        let std = self.std();
        for (ret, &d) in self.returns.iter_mut().zip(dones) {
            if d {
                *ret = 0.0;
            }
        }
        rewards.iter().map(|r| r / std).collect()
    }

    pub fn write_state(&self, file: &mut ArrayFile, prefix: &str) -> Result<()> {
        file.insert(
            format!("{prefix}stats"),
            vec![4],
            ArrayData::F64(vec![self.gamma, self.count, self.mean, self.m2]),
        )?;
        file.insert(
            format!("{prefix}returns"),
            vec![self.returns.len()],
            ArrayData::F64(self.returns.clone()),
        )
    }

    pub fn read_state(&mut self, file: &ArrayFile, prefix: &str) -> Result<()> {
        let s = file.f64(&format!("{prefix}stats"), &[4])?;
        let r = file.f64(&format!("{prefix}returns"), &[self.returns.len()])?;
        self.gamma = s[0];
        self.count = s[1];
        self.mean = s[2];
        self.m2 = s[3];
        self.returns.copy_from_slice(r);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_rewards_stay_zero() {
        let mut n = RewardNormalizer::new(3, 0.99);
        for _ in 0..10 {
            assert_eq!(n.normalize(&[0.0; 3], &[false; 3]), vec![0.0; 3]);
        }
    }

    #[test]
    fn scale_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut a = RewardNormalizer::new(4, 0.99);
        let mut b = RewardNormalizer::new(4, 0.99);
        let mut last = (vec![], vec![]);
        for t in 0..2_500 {
            let r: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..2.0)).collect();
            let r10: Vec<f64> = r.iter().map(|x| 10.0 * x).collect();
            let d = [t % 100 == 99; 4];
            last = (a.normalize(&r, &d), b.normalize(&r10, &d));
        }
        for (x, y) in last.0.iter().zip(&last.1) {
            assert!((x - y).abs() <= 1e-3 * x.abs().max(1e-3), "{x} vs {y}");
        }
    }

    #[test]
    fn variance_matches_two_pass_over_returns() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut n = RewardNormalizer::new(2, 0.9);
        let mut seen = vec![];
        let mut ret = [0.0f64; 2];
        for _ in 0..500 {
            let r = [rng.random_range(-1.0..1.0), rng.random_range(0.0..3.0)];
            n.normalize(&r, &[false; 2]);
            for i in 0..2 {
                ret[i] = ret[i] * 0.9 + r[i];
                seen.push(ret[i]);
            }
        }
        let m = seen.iter().sum::<f64>() / seen.len() as f64;
        let var = seen.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / seen.len() as f64;
        assert!((n.variance() - var).abs() / var < 1e-3);
    }

    #[test]
    fn count_strictly_increases_and_state_round_trips() {
        let mut n = RewardNormalizer::new(2, 0.99);
        let mut c = n.count();
        for _ in 0..5 {
            n.normalize(&[1.0, -1.0], &[false, true]);
            assert!(n.count() > c);
            c = n.count();
        }
        let mut f = ArrayFile::new();
        n.write_state(&mut f, "norm/").unwrap();
        let mut m = RewardNormalizer::new(2, 0.5);
        m.read_state(&f, "norm/").unwrap();
        assert_eq!(m, n);
    }
}
