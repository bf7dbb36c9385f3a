use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// GAE over one trajectory segment. `bootstrap` is `V(s_T)`.
pub fn gae_sequence(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    let mut next_value = bootstrap;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        next_adv = delta + gamma * lambda * live * next_adv;
        adv[t] = next_adv;
        next_value = values[t];
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, ret)
}

/// Batched GAE over `[steps, envs]` arrays.
pub fn gae(
    rewards: ArrayView2<'_, f64>,
    values: ArrayView2<'_, f64>,
    dones: ArrayView2<'_, bool>,
    bootstrap: ArrayView1<'_, f64>,
    gamma: f64,
    lambda: f64,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let (t, n) = rewards.dim();
    if values.dim() != (t, n) || dones.dim() != (t, n) || bootstrap.len() != n {
        return Err(Error::shape("gae inputs", &[t, n], values.shape()));
    }
    let mut adv = Array2::zeros((t, n));
    let mut ret = Array2::zeros((t, n));
    for e in 0..n {
        let r: Vec<f64> = rewards.column(e).to_vec();
        let v: Vec<f64> = values.column(e).to_vec();
        let d: Vec<bool> = dones.column(e).to_vec();
        let (a, rt) = gae_sequence(&r, &v, &d, bootstrap[e], gamma, lambda);
        for s in 0..t {
            adv[[s, e]] = a[s];
            ret[[s, e]] = rt[s];
        }
    }
    Ok((adv, ret))
}

/// Shift to mean 0 and scale to (population) std 1.
pub fn standardize(x: &mut [f64]) {
    let n = x.len() as f64;
    if x.is_empty() {
        return;
    }
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    for v in x.iter_mut() {
        *v = (*v - mean) / std;
    }
}
