use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffcore::Scalar;
use crate::error::{Error, Result};

/// Observation perturbations used to form positive pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Augmentation {
    RandomMasking,
    GaussianNoise,
    RandomAmplitudeScaling,
    IdentityMapping,
}

impl std::str::FromStr for Augmentation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::config("srl.augmentations", format!("unknown augmentation `{s}`")))
    }
}

/// Magnitudes of the augmentation ops.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentParams {
    pub mask_prob: f64,
    pub noise_std: f64,
    pub scale_range: [f64; 2],
}

impl Default for AugmentParams {
    fn default() -> Self {
        AugmentParams {
            mask_prob: 0.1,
            noise_std: 0.05,
            scale_range: [0.8, 1.2],
        }
    }
}

impl AugmentParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mask_prob) {
            return Err(Error::config("srl.augment.mask_prob", "must lie in [0, 1]"));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::config("srl.augment.noise_std", "must be finite and >= 0"));
        }
        let [lo, hi] = self.scale_range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::config("srl.augment.scale_range", "must be finite with lo <= hi"));
        }
        Ok(())
    }
}

/// Apply `op` to every row of `x`. Draws happen in row-major order.
pub fn augment<T: Scalar, R: Rng + ?Sized>(
    x: &Array2<T>,
    op: Augmentation,
    params: &AugmentParams,
    rng: &mut R,
) -> Array2<T> {
    match op {
        Augmentation::IdentityMapping => x.clone(),
        Augmentation::RandomMasking => x.mapv(|v| {
            if rng.random_bool(params.mask_prob) {
                T::zero()
            } else {
                v
            }
        }),
        Augmentation::GaussianNoise => x.mapv(|v| {
            let n: f64 = rng.sample(StandardNormal);
            v + T::of(params.noise_std * n)
        }),
        Augmentation::RandomAmplitudeScaling => {
            let [lo, hi] = params.scale_range;
            let mut out = x.clone();
            for mut row in out.rows_mut() {
                let u = if lo < hi { rng.random_range(lo..=hi) } else { lo };
                row.mapv_inplace(|v| v * T::of(u));
            }
            out
        }
    }
}
