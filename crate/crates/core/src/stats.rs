//! Small statistics helpers shared by the critic and the KPI reports.

use crate::scalar::Scalar;

/// Gini coefficient of a set of non-negative values.
///
/// Defined as the mean absolute difference between all pairs divided by
/// twice the mean. Returns 0 for empty input, a single value, or an
/// all-zero population (everyone equally has nothing).
pub fn gini<F: Scalar>(values: &[F]) -> F {
    let n = values.len();
    if n < 2 {
        return F::zero();
    }
    let total: F = values.iter().fold(F::zero(), |acc, &v| acc + v);
    if total <= F::zero() {
        return F::zero();
    }
    let mut abs_diff_sum = F::zero();
    for i in 0..n {
        for k in 0..n {
            abs_diff_sum += (values[i] - values[k]).abs();
        }
    }
    let denom = F::of_usize(2 * n) * total;
    abs_diff_sum / denom
}

/// Arithmetic mean; 0 for empty input.
pub fn mean<F: Scalar>(values: &[F]) -> F {
    if values.is_empty() {
        return F::zero();
    }
    let total: F = values.iter().fold(F::zero(), |acc, &v| acc + v);
    total / F::of_usize(values.len())
}

/// Clamp into `[0, 1]`.
pub fn clamp_unit<F: Scalar>(v: F) -> F {
    v.max(F::zero()).min(F::one())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn gini_of_equal_values_is_zero() {
        assert_abs_diff_eq!(gini(&[10.0_f64, 10.0]), 0.0);
        assert_abs_diff_eq!(gini(&[3.0_f64, 3.0, 3.0, 3.0]), 0.0);
    }

    #[test]
    fn gini_two_point_extreme() {
        // (20, 0): mean abs diff 10, mean 10 -> G = 0.5.
        assert_abs_diff_eq!(gini(&[20.0_f64, 0.0]), 0.5);
    }

    #[test]
    fn gini_degenerate_inputs() {
        assert_abs_diff_eq!(gini::<f64>(&[]), 0.0);
        assert_abs_diff_eq!(gini(&[7.0_f64]), 0.0);
        assert_abs_diff_eq!(gini(&[0.0_f64, 0.0, 0.0]), 0.0);
    }

    #[test]
    fn gini_is_scale_invariant() {
        let a = gini(&[1.0_f64, 2.0, 5.0]);
        let b = gini(&[10.0_f64, 20.0, 50.0]);
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
    }

    #[test]
    fn mean_and_clamp() {
        assert_abs_diff_eq!(mean(&[1.0_f64, 2.0, 3.0]), 2.0);
        assert_abs_diff_eq!(mean::<f64>(&[]), 0.0);
        assert_abs_diff_eq!(clamp_unit(1.7_f64), 1.0);
        assert_abs_diff_eq!(clamp_unit(-0.2_f64), 0.0);
        assert_abs_diff_eq!(clamp_unit(0.4_f64), 0.4);
    }
}
