//! Reward kernels shared by both environments.

/// `exp(-||x - x_ref||^2 / (2 sigma^2))`, in (0, 1].
pub fn tracking_reward(x: &[f64], x_ref: &[f64], sigma: f64) -> f64 {
    debug_assert_eq!(x.len(), x_ref.len());
    (-squared_distance(x, x_ref) / (2.0 * sigma * sigma)).exp()
}

/// `||a_t - 2 a_{t-1} + a_{t-2}||^2`.
pub fn action_smoothness_penalty(a_t: &[f64], a_t1: &[f64], a_t2: &[f64]) -> f64 {
    a_t.iter()
        .zip(a_t1)
        .zip(a_t2)
        .map(|((&x, &y), &z)| {
            let d = x - 2.0 * y + z;
            d * d
        })
        .sum()
}

/// `||a_t - a_{t-1}||^2`.
pub fn action_rate_penalty(a_t: &[f64], a_t1: &[f64]) -> f64 {
    squared_distance(a_t, a_t1)
}

pub fn squared_norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

pub fn squared_distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// `sum_i w_i * term_i`.
pub fn weighted_sum(weights: &[f64], terms: &[f64]) -> f64 {
    weights.iter().zip(terms).map(|(w, t)| w * t).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tracking_at_one_sigma() {
        assert_eq!(tracking_reward(&[0.3, -0.2], &[0.3, -0.2], 0.25), 1.0);
        let r = tracking_reward(&[0.25, 0.0], &[0.0, 0.0], 0.25);
        assert!((r - (-0.5f64).exp()).abs() < 1e-15);
        assert!((r - 0.6065).abs() < 1e-4);
    }

    #[test]
    fn tracking_far_away_is_small_but_positive() {
        let r = tracking_reward(&[3.0], &[0.0], 0.25);
        assert!(r > 0.0 && r < 1e-30);
    }

    #[test]
    fn smoothness_examples() {
        assert_eq!(action_smoothness_penalty(&[0.4; 3], &[0.4; 3], &[0.4; 3]), 0.0);
        // a_t = t u on t = 2, 1, 0
        let u = [0.1, -0.3, 0.2];
        let ramp = |t: f64| u.map(|x| t * x);
        assert!(action_smoothness_penalty(&ramp(2.0), &ramp(1.0), &ramp(0.0)).abs() < 1e-15);
        assert_eq!(action_smoothness_penalty(&[1.0], &[0.0], &[0.0]), 1.0);
    }

    proptest! {
        #[test]
        fn tracking_lies_in_unit_interval(
            x in prop::collection::vec(-2.0f64..2.0, 3),
            y in prop::collection::vec(-2.0f64..2.0, 3),
        ) {
            let r = tracking_reward(&x, &y, 0.25);
            prop_assert!(r > 0.0 && r <= 1.0);
        }
    }
}
