//! Adaptive-moment gradient steps over a flat parameter vector.

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// First/second-moment accumulators for one parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState<F: Scalar> {
    pub first_moment: Vec<F>,
    pub second_moment: Vec<F>,
    pub step: u64,
    pub beta1: F,
    pub beta2: F,
    pub epsilon: F,
}

impl<F: Scalar> AdamState<F> {
    pub fn new(param_count: usize) -> Self {
        Self {
            first_moment: vec![F::zero(); param_count],
            second_moment: vec![F::zero(); param_count],
            step: 0,
            beta1: F::of_f64(0.9),
            beta2: F::of_f64(0.999),
            epsilon: F::of_f64(1e-8),
        }
    }

    /// One bias-corrected update of `params` in place.
    pub fn update(&mut self, params: &mut [F], grads: &[F], learning_rate: F) {
        assert_eq!(params.len(), self.first_moment.len());
        assert_eq!(grads.len(), params.len());
        self.step += 1;
        let t = self.step as i32;
        let correction1 = F::one() - self.beta1.powi(t);
        let correction2 = F::one() - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.first_moment[i] = self.beta1 * self.first_moment[i] + (F::one() - self.beta1) * g;
            self.second_moment[i] =
                self.beta2 * self.second_moment[i] + (F::one() - self.beta2) * g * g;
            let m_hat = self.first_moment[i] / correction1;
            let v_hat = self.second_moment[i] / correction2;
            params[i] -= learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate_in_gradient_direction() {
        // With zeroed moments the bias-corrected first step is lr * sign(g).
        let mut opt: AdamState<f64> = AdamState::new(2);
        let mut params = vec![1.0, -2.0];
        opt.update(&mut params, &[0.5, -3.0], 0.1);
        assert!((params[0] - (1.0 - 0.1 * 0.5 / (0.5 + 1e-8))).abs() < 1e-9);
        assert!((params[1] - (-2.0 + 0.1 * 3.0 / (3.0 + 1e-8))).abs() < 1e-9);
    }

    #[test]
    fn converges_on_a_quadratic() {
        let mut opt: AdamState<f64> = AdamState::new(1);
        let mut params = vec![5.0];
        for _ in 0..2_000 {
            let g = 2.0 * (params[0] - 3.0);
            opt.update(&mut params, &[g], 0.05);
        }
        assert!((params[0] - 3.0).abs() < 1e-3, "got {}", params[0]);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point_from_fresh_state() {
        let mut opt: AdamState<f64> = AdamState::new(3);
        let mut params = vec![1.0, 2.0, 3.0];
        let before = params.clone();
        opt.update(&mut params, &[0.0, 0.0, 0.0], 0.1);
        assert_eq!(params, before);
    }
}
