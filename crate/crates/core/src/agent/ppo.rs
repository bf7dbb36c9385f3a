use std::f64::consts::PI;

use ndarray::Array2;

use super::AgentNodes;
use crate::diffcore::{Graph, NodeId, Scalar};
use crate::error::{Error, Result};

/// Diagonal-Gaussian log density per row, `B x 1`.
///
/// `log_std` is a `1 x k` node broadcast over the batch.
pub fn gaussian_log_prob<T: Scalar>(
    g: &mut Graph<'_, T>,
    mean: NodeId,
    log_std: NodeId,
    actions: NodeId,
) -> Result<NodeId> {
    let k = g.value(mean).ncols();
    let diff = g.sub(actions, mean)?;
    let sq = g.square(diff);
    let m2 = g.scale(log_std, T::of(-2.0));
    let inv_var = g.exp(m2);
    let z = g.mul(sq, inv_var)?;
    let half = g.scale(z, T::of(0.5));
    let per_dim = g.add(half, log_std)?;
    let s = g.sum_cols(per_dim);
    let neg = g.neg(s);
    Ok(g.offset(neg, T::of(-0.5 * k as f64 * (2.0 * PI).ln())))
}

/// Entropy of the state-independent Gaussian, `1 x 1`.
pub fn gaussian_entropy<T: Scalar>(g: &mut Graph<'_, T>, log_std: NodeId) -> NodeId {
    let k = g.value(log_std).ncols();
    let s = g.sum_cols(log_std);
    let m = g.mean(s);
    g.offset(m, T::of(0.5 * k as f64 * (2.0 * PI * std::f64::consts::E).ln()))
}

/// `sum_i log sigma_i + k/2 log(2 pi e)`.
pub fn gaussian_entropy_closed_form(log_std: &[f64]) -> f64 {
    log_std.iter().sum::<f64>() + 0.5 * log_std.len() as f64 * (2.0 * PI * std::f64::consts::E).ln()
}

/// `-mean(min(rho A, clip(rho, 1-eps, 1+eps) A))` with
/// `rho = exp(logp_new - logp_old)`.
pub fn clipped_surrogate_loss<T: Scalar>(
    g: &mut Graph<'_, T>,
    logp_new: NodeId,
    logp_old: NodeId,
    adv: NodeId,
    eps: f64,
) -> Result<NodeId> {
    let d = g.sub(logp_new, logp_old)?;
    let ratio = g.exp(d);
    let s1 = g.mul(ratio, adv)?;
    let clipped = g.clamp(ratio, T::of(1.0 - eps), T::of(1.0 + eps));
    let s2 = g.mul(clipped, adv)?;
    let obj = g.min(s1, s2)?;
    let m = g.mean(obj);
    Ok(g.neg(m))
}

/// `mean(max((v - R)^2, (v_old + clip(v - v_old, -c, c) - R)^2))`;
/// `clip = None` gives plain mean squared error.
pub fn clipped_value_loss<T: Scalar>(
    g: &mut Graph<'_, T>,
    v_new: NodeId,
    v_old: NodeId,
    returns: NodeId,
    clip: Option<f64>,
) -> Result<NodeId> {
    let err = g.sub(v_new, returns)?;
    let sq = g.square(err);
    let Some(c) = clip else {
        return Ok(g.mean(sq));
    };
    let dv = g.sub(v_new, v_old)?;
    let dvc = g.clamp(dv, T::of(-c), T::of(c));
    let vc = g.add(v_old, dvc)?;
    let errc = g.sub(vc, returns)?;
    let sqc = g.square(errc);
    let worst = g.max(sq, sqc)?;
    Ok(g.mean(worst))
}

/// Mean KL(old || new) between diagonal Gaussians with per-row means and
/// shared log-stds.
pub fn gaussian_kl(
    mu_old: &Array2<f64>,
    log_std_old: &[f64],
    mu_new: &Array2<f64>,
    log_std_new: &[f64],
) -> f64 {
    let mut total = 0.0;
    for (ro, rn) in mu_old.rows().into_iter().zip(mu_new.rows()) {
        for i in 0..ro.len() {
            let (lo, ln) = (log_std_old[i], log_std_new[i]);
            let var_old = (2.0 * lo).exp();
            let var_new = (2.0 * ln).exp();
            let d = ro[i] - rn[i];
            total += ln - lo + (var_old + d * d) / (2.0 * var_new) - 0.5;
        }
    }
    total / mu_old.nrows().max(1) as f64
}

/// Multiplicative dead-zone schedule: shrink by 1.5 above twice the target,
/// grow by 1.5 below half of it, then clamp.
pub fn adapt_learning_rate(lr: f64, kl: f64, desired: f64, min: f64, max: f64) -> f64 {
    let next = if kl > 2.0 * desired {
        lr / 1.5
    } else if kl < desired / 2.0 {
        lr * 1.5
    } else {
        lr
    };
    next.clamp(min, max)
}

/// One minibatch of rollout data in training precision.
#[derive(Debug, Clone)]
pub struct PpoMinibatch<T> {
    pub policy_input: Array2<T>,
    pub state: Array2<T>,
    pub actions: Array2<T>,
    pub old_log_prob: Array2<T>,
    pub old_value: Array2<T>,
    pub advantage: Array2<T>,
    pub returns: Array2<T>,
}

impl<T: Scalar> PpoMinibatch<T> {
    pub fn len(&self) -> usize {
        self.policy_input.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check(&self) -> Result<()> {
        let b = self.len();
        for (name, a) in [
            ("state", &self.state),
            ("actions", &self.actions),
            ("old_log_prob", &self.old_log_prob),
            ("old_value", &self.old_value),
            ("advantage", &self.advantage),
            ("returns", &self.returns),
        ] {
            if a.nrows() != b {
                return Err(Error::shape(format!("minibatch {name} rows"), &[b], &[a.nrows()]));
            }
        }
        Ok(())
    }
}

/// Nodes of the combined RL loss.
#[derive(Debug, Clone, Copy)]
pub struct PpoLoss {
    /// `policy + value_coef * value - entropy_coef * entropy`.
    pub total: NodeId,
    pub policy: NodeId,
    pub value: NodeId,
    pub entropy: NodeId,
    pub mean: NodeId,
}

pub fn ppo_loss<T: Scalar>(
    g: &mut Graph<'_, T>,
    nodes: &AgentNodes,
    batch: &PpoMinibatch<T>,
    clip_ratio: f64,
    value_clip: f64,
    value_coef: f64,
    entropy_coef: f64,
) -> Result<PpoLoss> {
    batch.check()?;
    let x = g.constant(batch.policy_input.clone());
    let s = g.constant(batch.state.clone());
    let a = g.constant(batch.actions.clone());
    let lp_old = g.constant(batch.old_log_prob.clone());
    let v_old = g.constant(batch.old_value.clone());
    let adv = g.constant(batch.advantage.clone());
    let ret = g.constant(batch.returns.clone());

    let mean = nodes.policy_mean(g, x)?;
    let lp = gaussian_log_prob(g, mean, nodes.log_std, a)?;
    let policy = clipped_surrogate_loss(g, lp, lp_old, adv, clip_ratio)?;
    let v = nodes.value(g, s)?;
    let value = clipped_value_loss(g, v, v_old, ret, Some(value_clip))?;
    let entropy = gaussian_entropy(g, nodes.log_std);

    let vterm = g.scale(value, T::of(value_coef));
    let eterm = g.scale(entropy, T::of(-entropy_coef));
    let pv = g.add(policy, vterm)?;
    let total = g.add(pv, eterm)?;
    Ok(PpoLoss {
        total,
        policy,
        value,
        entropy,
        mean,
    })
}
