use ndarray::Array2;

use crate::diffcore::{Graph, NodeId, ParamRef, Scalar};
use crate::error::{Error, Result};

/// Denominator floor for row normalization.
pub const NCS_EPS: f64 = 1e-8;

/// Copy of `s` with exact zeros in the `mask` columns.
pub fn zero_masking<T: Scalar>(s: &Array2<T>, mask: &[usize]) -> Result<Array2<T>> {
    if let Some(&bad) = mask.iter().find(|&&i| i >= s.ncols()) {
        return Err(Error::config(
            "privileged_mask",
            format!("index {bad} out of range for dimension {}", s.ncols()),
        ));
    }
    let mut out = s.clone();
    for &i in mask {
        out.column_mut(i).fill(T::zero());
    }
    Ok(out)
}

/// Negative cosine similarity per row, `B x 1`.
pub fn d_ncs<T: Scalar>(g: &mut Graph<'_, T>, p: NodeId, z: NodeId) -> Result<NodeId> {
    let pn = g.row_normalize(p, T::of(NCS_EPS));
    let zn = g.row_normalize(z, T::of(NCS_EPS));
    let dot = g.row_dot(pn, zn)?;
    Ok(g.neg(dot))
}

/// `mean[D(h(f(s)), sg(f(s~))) + D(h(f(s~)), sg(f(s)))]` with `s~` the
/// zero-masked copy of `s`.
pub fn pvp_loss<T: Scalar>(
    g: &mut Graph<'_, T>,
    encoder: ParamRef,
    predictor: ParamRef,
    s: NodeId,
    s_masked: NodeId,
) -> Result<NodeId> {
    let z = g.mlp(encoder, s)?;
    let zt = g.mlp(encoder, s_masked)?;
    let p = g.mlp(predictor, z)?;
    let pt = g.mlp(predictor, zt)?;
    let sg_z = g.stop_gradient(z);
    let sg_zt = g.stop_gradient(zt);
    let a = d_ncs(g, p, sg_zt)?;
    let b = d_ncs(g, pt, sg_z)?;
    let sum = g.add(a, b)?;
    Ok(g.mean(sum))
}

/// Symmetric SimSiam loss over two views,
/// `mean(1/2 [D(h(f(x1)), sg(f(x2))) + D(h(f(x2)), sg(f(x1)))])`.
pub fn simsiam_loss<T: Scalar>(
    g: &mut Graph<'_, T>,
    encoder: ParamRef,
    predictor: ParamRef,
    x1: NodeId,
    x2: NodeId,
) -> Result<NodeId> {
    let z1 = g.mlp(encoder, x1)?;
    let z2 = g.mlp(encoder, x2)?;
    let p1 = g.mlp(predictor, z1)?;
    let p2 = g.mlp(predictor, z2)?;
    let sg1 = g.stop_gradient(z1);
    let sg2 = g.stop_gradient(z2);
    let a = d_ncs(g, p1, sg2)?;
    let b = d_ncs(g, p2, sg1)?;
    let sum = g.add(a, b)?;
    let half = g.scale(sum, T::of(0.5));
    Ok(g.mean(half))
}

/// Multi-step latent prediction loss.
///
/// `obs[0]` feeds the online encoder; `obs[k]` (k >= 1) feeds the target
/// encoder behind a stop-gradient. `actions[k]` drives the transition from
/// step k to k+1. Returns the batch mean of
/// `sum_k ||z^_k - sg(g(obs[k]))||^2`.
pub fn spr_loss<T: Scalar>(
    g: &mut Graph<'_, T>,
    encoder: ParamRef,
    target_encoder: ParamRef,
    dynamics: ParamRef,
    obs: &[NodeId],
    actions: &[NodeId],
) -> Result<NodeId> {
    let k = actions.len();
    if k == 0 || obs.len() != k + 1 {
        return Err(Error::config(
            "srl.spr_steps",
            format!("need K >= 1 actions and K + 1 observations, got {k} and {}", obs.len()),
        ));
    }
    let mut z = g.mlp(encoder, obs[0])?;
    let mut total: Option<NodeId> = None;
    for step in 1..=k {
        let za = g.concat(z, actions[step - 1])?;
        z = g.mlp(dynamics, za)?;
        let t = g.mlp(target_encoder, obs[step])?;
        let t = g.stop_gradient(t);
        let d = g.sub(z, t)?;
        let sq = g.square(d);
        let per_row = g.sum_cols(sq);
        total = Some(match total {
            Some(acc) => g.add(acc, per_row)?,
            None => per_row,
        });
    }
    Ok(g.mean(total.expect("k >= 1")))
}

/// Bounds for the VAE log-std head.
pub const VAE_LOG_SIGMA: (f64, f64) = (-6.0, 2.0);

/// Nodes of the VAE objective.
#[derive(Debug, Clone, Copy)]
pub struct VaeLoss {
    pub total: NodeId,
    pub reconstruction: NodeId,
    pub kl: NodeId,
}

/// Negative ELBO with a unit-variance Gaussian decoder and standard normal
/// prior; `eps` is the reparameterization noise, `B x latent`.
pub fn vae_loss<T: Scalar>(
    g: &mut Graph<'_, T>,
    encoder: ParamRef,
    mu_head: ParamRef,
    log_sigma_head: ParamRef,
    decoder: ParamRef,
    o: NodeId,
    eps: Array2<T>,
) -> Result<VaeLoss> {
    let h = g.mlp(encoder, o)?;
    let mu = g.mlp(mu_head, h)?;
    let raw = g.mlp(log_sigma_head, h)?;
    let log_sigma = g.clamp(raw, T::of(VAE_LOG_SIGMA.0), T::of(VAE_LOG_SIGMA.1));
    let sigma = g.exp(log_sigma);
    let e = g.constant(eps);
    let noise = g.mul(sigma, e)?;
    let z = g.add(mu, noise)?;
    let recon = g.mlp(decoder, z)?;
    let diff = g.sub(o, recon)?;
    let sq = g.square(diff);
    let rs = g.sum_cols(sq);
    let r = g.scale(rs, T::of(0.5));

    let mu2 = g.square(mu);
    let two_ls = g.scale(log_sigma, T::of(2.0));
    let var = g.exp(two_ls);
    let a = g.add(mu2, var)?;
    let b = g.sub(a, two_ls)?;
    let c = g.offset(b, -T::one());
    let ks = g.sum_cols(c);
    let kl = g.scale(ks, T::of(0.5));

    let both = g.add(r, kl)?;
    Ok(VaeLoss {
        total: g.mean(both),
        reconstruction: g.mean(r),
        kl: g.mean(kl),
    })
}

/// Batch std of each latent dimension of `z / ||z||`.
pub fn embedding_dim_stds(z: &Array2<f64>) -> Vec<f64> {
    let mut zn = z.clone();
    for mut row in zn.rows_mut() {
        let n = row.dot(&row).sqrt().max(NCS_EPS);
        row.mapv_inplace(|v| v / n);
    }
    let b = zn.nrows().max(1) as f64;
    zn.columns()
        .into_iter()
        .map(|c| {
            let m = c.sum() / b;
            (c.mapv(|v| (v - m) * (v - m)).sum() / b).sqrt()
        })
        .collect()
}

/// Mean over latent dimensions of [`embedding_dim_stds`].
pub fn embedding_std(z: &Array2<f64>) -> f64 {
    let s = embedding_dim_stds(z);
    s.iter().sum::<f64>() / s.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::MlpParams;
    use ndarray::array;

    fn ncs(p: Array2<f64>, z: Array2<f64>) -> f64 {
        let mut g = Graph::new();
        let a = g.constant(p);
        let b = g.constant(z);
        let d = d_ncs(&mut g, a, b).unwrap();
        g.value(d)[[0, 0]]
    }

    #[test]
    fn zero_masking_examples() {
        let s = array![[1.0, 2.0, 3.0, 4.0]];
        assert_eq!(zero_masking(&s, &[0, 2]).unwrap(), array![[0.0, 2.0, 0.0, 4.0]]);
        assert_eq!(zero_masking(&s, &[]).unwrap(), s);
        assert!(zero_masking(&s, &[4]).unwrap_err().is_config());
    }

    #[test]
    fn d_ncs_examples() {
        assert_eq!(ncs(array![[1.0, 0.0]], array![[1.0, 0.0]]), -1.0);
        assert_eq!(ncs(array![[1.0, 0.0]], array![[0.0, 1.0]]), 0.0);
        assert_eq!(ncs(array![[1.0, 0.0]], array![[-2.0, 0.0]]), 1.0);
        assert!(ncs(array![[0.0, 0.0]], array![[1.0, 0.0]]).abs() < 1e-12);
    }

    #[test]
    fn pvp_identity_predictor_empty_mask_is_minus_two() {
        let enc = MlpParams::<f64>::init(&[4, 6, 5], 1.0, &mut rand::rng());
        let pred = MlpParams::<f64>::identity(5);
        let s = array![[0.1, 0.2, -0.3, 0.4], [1.0, -1.0, 0.5, 0.0]];
        let mut g = Graph::new();
        let e = g.register(&enc);
        let p = g.register(&pred);
        let a = g.constant(s.clone());
        let b = g.constant(zero_masking(&s, &[]).unwrap());
        let l = pvp_loss(&mut g, e, p, a, b).unwrap();
        assert!((g.scalar(l) + 2.0).abs() < 1e-12);
    }

    #[test]
    fn simsiam_identical_views_identity_predictor() {
        let enc = MlpParams::<f64>::init(&[3, 4], 1.0, &mut rand::rng());
        let pred = MlpParams::<f64>::identity(4);
        let x = array![[0.3, -0.2, 0.9]];
        let mut g = Graph::new();
        let e = g.register(&enc);
        let p = g.register(&pred);
        let a = g.constant(x.clone());
        let b = g.constant(x);
        let l = simsiam_loss(&mut g, e, p, a, b).unwrap();
        assert!((g.scalar(l) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn spr_zero_networks_and_fixed_point() {
        let zero_enc = MlpParams::<f64>::zeros(&[3, 4]);
        let zero_dyn = MlpParams::<f64>::zeros(&[5, 4]);
        let o = array![[0.5, -0.5, 1.0]];
        let a = array![[0.3]];
        let mut g = Graph::new();
        let e = g.register(&zero_enc);
        let t = g.register(&zero_enc);
        let d = g.register(&zero_dyn);
        let on = g.constant(o.clone());
        let an = g.constant(a.clone());
        let l = spr_loss(&mut g, e, t, d, &[on, on], &[an]).unwrap();
        assert_eq!(g.scalar(l), 0.0);

        // Identity encoder; dynamics copies the latent and ignores the action.
        let id = MlpParams::<f64>::identity(3);
        let mut copy = MlpParams::<f64>::zeros(&[4, 3]);
        for i in 0..3 {
            copy.layers_mut()[0].weight[[i, i]] = 1.0;
        }
        let mut g = Graph::new();
        let e = g.register(&id);
        let t = g.register(&id);
        let d = g.register(&copy);
        let on = g.constant(o);
        let an = g.constant(a);
        let l = spr_loss(&mut g, e, t, d, &[on, on], &[an]).unwrap();
        assert_eq!(g.scalar(l), 0.0);
    }

    #[test]
    fn spr_rejects_mismatched_lengths() {
        let enc = MlpParams::<f64>::zeros(&[2, 2]);
        let mut g = Graph::new();
        let e = g.register(&enc);
        let o = g.constant(array![[0.0, 0.0]]);
        assert!(spr_loss(&mut g, e, e, e, &[o], &[]).is_err());
    }

    fn single(w: f64, b: f64) -> MlpParams<f64> {
        let mut p = MlpParams::zeros(&[1, 1]);
        p.layers_mut()[0].weight[[0, 0]] = w;
        p.layers_mut()[0].bias[0] = b;
        p
    }

    #[test]
    fn vae_kl_closed_forms() {
        // Encoder outputs 0; mu head bias sets mu; log-sigma head bias sets log sigma.
        let enc = MlpParams::<f64>::zeros(&[1, 1]);
        let dec = MlpParams::<f64>::zeros(&[1, 1]);
        for (mu, want) in [(0.0, 0.0), (1.0, 0.5)] {
            let mu_h = single(0.0, mu);
            let ls_h = single(0.0, 0.0);
            let mut g = Graph::new();
            let (e, m, l, d) = (g.register(&enc), g.register(&mu_h), g.register(&ls_h), g.register(&dec));
            let o = g.constant(array![[0.0]]);
            let v = vae_loss(&mut g, e, m, l, d, o, array![[0.0]]).unwrap();
            assert!((g.scalar(v.kl) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn vae_perfect_decoder_on_zero_noise() {
        // o -> h = o -> mu = h -> dec(z) = z reconstructs o exactly when eps = 0.
        let id = single(1.0, 0.0);
        let ls_h = single(0.0, -1.0);
        let mut g = Graph::new();
        let (e, m, l, d) = (g.register(&id), g.register(&id), g.register(&ls_h), g.register(&id));
        let o = g.constant(array![[0.7], [-0.3]]);
        let v = vae_loss(&mut g, e, m, l, d, o, array![[0.0], [0.0]]).unwrap();
        assert_eq!(g.scalar(v.reconstruction), 0.0);
    }

    #[test]
    fn embedding_std_of_collapsed_batch_is_zero() {
        let z = array![[1.0, 2.0], [2.0, 4.0], [0.5, 1.0]];
        assert!(embedding_std(&z) < 1e-12);
        let spread = array![[1.0, 0.0], [0.0, 1.0]];
        assert!((embedding_std(&spread) - 0.5).abs() < 1e-12);
    }
}
