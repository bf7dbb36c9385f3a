use crate::error::{Error, Result};

/// Outcome of a central-difference comparison.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub max_relative_error: f64,
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// `|a - n| / max(|a|, |n|, 1e-12)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

/// Compare the gradient reported by `loss_fn` at `point` against central
/// differences with step `h`, over every coordinate.
///
/// `loss_fn` returns `(loss, gradient)`; only the gradient at `point` itself is
/// used.
pub fn finite_diff_check<F>(loss_fn: F, point: &[f64], h: f64) -> Result<GradCheck>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let coords: Vec<usize> = (0..point.len()).collect();
    finite_diff_check_coords(loss_fn, point, h, &coords)
}

/// As [`finite_diff_check`], restricted to `coords`.
pub fn finite_diff_check_coords<F>(
    mut loss_fn: F,
    point: &[f64],
    h: f64,
    coords: &[usize],
) -> Result<GradCheck>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    if !(h > 0.0) {
        return Err(Error::config("h", "finite-difference step must be > 0"));
    }
    let (_, grad) = loss_fn(point)?;
    if grad.len() != point.len() {
        return Err(Error::shape("gradient", &[point.len()], &[grad.len()]));
    }
    let mut x = point.to_vec();
    let mut analytic = Vec::with_capacity(coords.len());
    let mut numeric = Vec::with_capacity(coords.len());
    let (mut worst, mut worst_index) = (0.0f64, 0usize);
    for &i in coords {
        let orig = x[i];
        x[i] = orig + h;
        let (up, _) = loss_fn(&x)?;
        x[i] = orig - h;
        let (down, _) = loss_fn(&x)?;
        x[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!("loss at perturbed coordinate {i}")));
        }
        let n = (up - down) / (2.0 * h);
        let err = relative_error(grad[i], n);
        if err > worst || err.is_nan() {
            worst = if err.is_nan() { f64::INFINITY } else { err };
            worst_index = i;
        }
        analytic.push(grad[i]);
        numeric.push(n);
    }
    Ok(GradCheck {
        max_relative_error: worst,
        worst_index,
        analytic,
        numeric,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{Graph, MlpParams, Parameters};
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn quadratic(x: &[f64]) -> Result<(f64, Vec<f64>)> {
        // f = sum_i (i+1) x_i^2 + x_0 x_1
        let mut f = x[0] * x[1];
        let mut g = vec![0.0; x.len()];
        for (i, &xi) in x.iter().enumerate() {
            f += (i as f64 + 1.0) * xi * xi;
            g[i] = 2.0 * (i as f64 + 1.0) * xi;
        }
        g[0] += x[1];
        g[1] += x[0];
        Ok((f, g))
    }

    #[test]
    fn quadratic_is_exact_up_to_roundoff() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..5 {
            let p: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
            let r = finite_diff_check(quadratic, &p, 1e-5).unwrap();
            assert!(r.max_relative_error <= 1e-9, "{}", r.max_relative_error);
        }
    }

    #[test]
    fn planted_factor_two_is_detected() {
        let doubled = |x: &[f64]| {
            let (f, g) = quadratic(x)?;
            Ok((f, g.into_iter().map(|v| 2.0 * v).collect()))
        };
        let r = finite_diff_check(doubled, &[0.5, -1.0, 0.25], 1e-5).unwrap();
        assert!((r.max_relative_error - 0.5).abs() < 1e-6);
    }

    #[test]
    fn non_finite_perturbed_loss_is_reported() {
        let f = |x: &[f64]| Ok(((x[0]).ln(), vec![1.0 / x[0]]));
        assert!(finite_diff_check(f, &[1e-7], 1e-5).is_err());
    }

    #[test]
    fn elu_network_backprop_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let base = MlpParams::<f64>::init(&[8, 16, 12, 4], 1.0, &mut rng);
        let input = Array2::from_shape_fn((3, 8), |_| rng.random_range(-1.5..1.5));
        let target = Array2::from_shape_fn((3, 4), |_| rng.random_range(-1.0..1.0));
        let loss = |flat: &[f64]| {
            let mut p = base.clone();
            p.assign_flat(flat);
            let mut g = Graph::new();
            let pr = g.register(&p);
            let x = g.constant(input.clone());
            let t = g.constant(target.clone());
            let y = g.mlp(pr, x)?;
            let d = g.sub(y, t)?;
            let sq = g.square(d);
            let e = g.exp(y);
            let s = g.add(sq, e)?;
            let l = g.mean(s);
            let value = g.scalar(l);
            let grads = g.backward(l)?;
            Ok((value, grads.param(pr).flatten()))
        };
        let r = finite_diff_check(loss, &base.flatten(), 1e-5).unwrap();
        assert!(r.max_relative_error <= 1e-6, "{r:?}");
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = MlpParams::<f64>::init(&[8, 10, 3], 1.0, &mut rng);
        let x0: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loss = |x: &[f64]| {
            let mut g = Graph::new();
            let pr = g.register(&p);
            let xin = g.leaf(Array2::from_shape_vec((1, 8), x.to_vec()).unwrap());
            let y = g.mlp(pr, xin)?;
            let n = g.row_normalize(y, 1e-8);
            let s = g.sum_cols(n);
            let sq = g.square(s);
            let l = g.mean(sq);
            let value = g.scalar(l);
            let grads = g.backward(l)?;
            Ok((value, grads.node(xin).unwrap().iter().copied().collect()))
        };
        let r = finite_diff_check(loss, &x0, 1e-5).unwrap();
        assert!(r.max_relative_error <= 1e-6, "{r:?}");
    }
}
