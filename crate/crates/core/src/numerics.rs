//! Small numerical helpers shared by the optimizers.

use ndarray::{Array1, ArrayView1};

/// `log(Σ exp(x_i))`, shifted by the maximum. Returns `-inf` for an empty input.
pub fn log_sum_exp(xs: impl IntoIterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().into_iter().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    let sum: f64 = xs.into_iter().map(|x| (x - max).exp()).sum();
    max + sum.ln()
}

/// Normalized weights `exp(-α v_i - LSE(-α v))`.
pub fn gibbs_weights(values: ArrayView1<'_, f64>, alpha: f64) -> Array1<f64> {
    let lse = log_sum_exp(values.iter().map(|&v| -alpha * v));
    values.mapv(|v| (-alpha * v - lse).exp())
}

pub fn l2_norm(v: ArrayView1<'_, f64>) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Scales `v` to unit ℓ2 norm; the zero vector is returned unchanged.
pub fn normalize_l2(v: &Array1<f64>) -> Array1<f64> {
    let norm = l2_norm(v.view());
    if norm > 0.0 {
        v / norm
    } else {
        v.clone()
    }
}

/// Clamps `value` into `[center - eps, center + eps]` such that the computed
/// distance `(result - center).abs()` is `<= eps` in floating point as well.
pub fn ball_clamp(value: f64, center: f64, eps: f64) -> f64 {
    if (value - center).abs() <= eps {
        return value;
    }
    let mut v = value.clamp(center - eps, center + eps);
    while (v - center).abs() > eps {
        v = if v > center { v.next_down() } else { v.next_up() };
    }
    v
}

/// Median of a non-empty slice (mean of the two central values for even length).
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    Some(if sorted.len().is_multiple_of(2) {
        0.5 * (sorted[mid - 1] + sorted[mid])
    } else {
        sorted[mid]
    })
}

/// Index of the first maximal entry.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn lse_matches_naive_for_small_inputs() {
        let xs = [0.1, -2.0, 3.5];
        let naive = xs.iter().map(|x: &f64| x.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(xs) - naive).abs() < 1e-14);
    }

    #[test]
    fn lse_survives_huge_inputs() {
        assert!((log_sum_exp([1e6, 1e6]) - (1e6 + 2f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn zero_vector_passes_normalization() {
        let z = array![0.0, 0.0];
        assert_eq!(normalize_l2(&z), z);
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }

    proptest! {
        #[test]
        fn ball_clamp_is_exact(v in -3.0f64..3.0, c in 0.0f64..1.0, eps in 0.0f64..1.0) {
            let out = ball_clamp(v, c, eps);
            prop_assert!((out - c).abs() <= eps);
            if (v - c).abs() <= eps {
                prop_assert_eq!(out, v);
            }
        }
    }
}
