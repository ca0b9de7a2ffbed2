//! Minimal dense network with tanh hidden layers and a linear output,
//! plus the explicit backward pass the PPO update differentiates through.
//!
//! Parameters flatten to a single vector in a fixed order (per layer:
//! weights row-major, then biases); the optimizer, the checkpoint format and
//! the finite-difference tests all rely on that one ordering.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::scalar::Scalar;

/// One dense layer; `weights` is row-major `[out_dim][in_dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<F: Scalar> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<F>,
    pub biases: Vec<F>,
}

impl<F: Scalar> Dense<F> {
    fn forward(&self, input: &[F], output: &mut [F]) {
        debug_assert_eq!(input.len(), self.in_dim);
        debug_assert_eq!(output.len(), self.out_dim);
        for o in 0..self.out_dim {
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = self.biases[o];
            for (w, x) in row.iter().zip(input) {
                acc += *w * *x;
            }
            output[o] = acc;
        }
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.biases.len()
    }
}

/// Multi-layer perceptron: tanh on every layer except the last.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<F: Scalar> {
    pub layers: Vec<Dense<F>>,
}

/// Activations recorded during a forward pass; `acts[0]` is the input and
/// `acts[k + 1]` the (post-activation) output of layer `k`.
#[derive(Debug, Clone)]
pub struct MlpCache<F: Scalar> {
    acts: Vec<Vec<F>>,
}

impl<F: Scalar> MlpCache<F> {
    pub fn output(&self) -> &[F] {
        self.acts.last().expect("cache holds at least the input")
    }
}

/// Per-layer gradient accumulator mirroring an [`Mlp`]'s shapes.
#[derive(Debug, Clone)]
pub struct MlpGrads<F: Scalar> {
    pub layers: Vec<(Vec<F>, Vec<F>)>,
}

impl<F: Scalar> MlpGrads<F> {
    pub fn zeros_like(net: &Mlp<F>) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| (vec![F::zero(); l.weights.len()], vec![F::zero(); l.biases.len()]))
                .collect(),
        }
    }

    pub fn scale(&mut self, factor: F) {
        for (w, b) in &mut self.layers {
            for g in w.iter_mut().chain(b.iter_mut()) {
                *g *= factor;
            }
        }
    }

    /// Append all gradients to `out` in flat parameter order.
    pub fn extend_flat(&self, out: &mut Vec<F>) {
        for (w, b) in &self.layers {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
    }
}

/// Sample a gain-scaled semi-orthogonal matrix (row-major `rows x cols`).
///
/// Orthonormalizes whichever of rows/columns is the smaller set via
/// Gram-Schmidt on standard-normal draws, resampling in the measure-zero
/// case of near dependence. Computed in f64 so every scalar type gets the
/// same initialization.
fn orthogonal_matrix(rows: usize, cols: usize, gain: f64, rng: &mut impl Rng) -> Vec<f64> {
    let (n_vecs, dim, by_rows) = if rows <= cols {
        (rows, cols, true)
    } else {
        (cols, rows, false)
    };
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n_vecs);
    while basis.len() < n_vecs {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        for e in &basis {
            let dot: f64 = v.iter().zip(e).map(|(a, b)| a * b).sum();
            for (vi, ei) in v.iter_mut().zip(e) {
                *vi -= dot * ei;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-8 {
            continue;
        }
        for vi in &mut v {
            *vi /= norm;
        }
        basis.push(v);
    }
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let value = if by_rows { basis[r][c] } else { basis[c][r] };
            out[r * cols + c] = value * gain;
        }
    }
    out
}

impl<F: Scalar> Mlp<F> {
    /// Build a network with layer sizes `dims` (input first), orthogonal
    /// hidden weights with gain sqrt(2), `output_gain` on the final layer,
    /// and zero biases.
    pub fn orthogonal(dims: &[usize], output_gain: f64, rng: &mut impl Rng) -> Self {
        assert!(dims.len() >= 2, "network needs input and output dims");
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(k, pair)| {
                let last = k == dims.len() - 2;
                let gain = if last { output_gain } else { std::f64::consts::SQRT_2 };
                let weights = orthogonal_matrix(pair[1], pair[0], gain, rng)
                    .into_iter()
                    .map(F::of_f64)
                    .collect();
                Dense {
                    in_dim: pair[0],
                    out_dim: pair[1],
                    weights,
                    biases: vec![F::zero(); pair[1]],
                }
            })
            .collect();
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().expect("non-empty network").in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty network").out_dim
    }

    /// Layer sizes, input first.
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.layers.iter().map(|l| l.out_dim));
        dims
    }

    pub fn forward(&self, input: &[F]) -> Vec<F> {
        self.forward_cached(input).acts.pop().expect("output present")
    }

    pub fn forward_cached(&self, input: &[F]) -> MlpCache<F> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input.to_vec());
        for (k, layer) in self.layers.iter().enumerate() {
            let mut out = vec![F::zero(); layer.out_dim];
            layer.forward(acts.last().expect("previous activation"), &mut out);
            if k + 1 < self.layers.len() {
                for v in &mut out {
                    *v = v.tanh();
                }
            }
            acts.push(out);
        }
        MlpCache { acts }
    }

    /// Accumulate parameter gradients for `d loss / d output` into `grads`.
    pub fn backward(&self, cache: &MlpCache<F>, grad_output: &[F], grads: &mut MlpGrads<F>) {
        debug_assert_eq!(grad_output.len(), self.output_dim());
        let mut grad = grad_output.to_vec();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let input = &cache.acts[k];
            let output = &cache.acts[k + 1];
            // Hidden outputs passed through tanh; fold its derivative in.
            if k + 1 < self.layers.len() {
                for (g, a) in grad.iter_mut().zip(output) {
                    *g *= F::one() - *a * *a;
                }
            }
            let (dw, db) = &mut grads.layers[k];
            for o in 0..layer.out_dim {
                let g = grad[o];
                db[o] += g;
                let row = &mut dw[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (slot, x) in row.iter_mut().zip(input) {
                    *slot += g * *x;
                }
            }
            if k > 0 {
                let mut prev = vec![F::zero(); layer.in_dim];
                for o in 0..layer.out_dim {
                    let g = grad[o];
                    let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                    for (p, w) in prev.iter_mut().zip(row) {
                        *p += *w * g;
                    }
                }
                grad = prev;
            }
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    /// Append all parameters to `out` in flat order.
    pub fn extend_flat(&self, out: &mut Vec<F>) {
        for layer in &self.layers {
            out.extend_from_slice(&layer.weights);
            out.extend_from_slice(&layer.biases);
        }
    }

    /// Load parameters from a flat slice; returns how many were consumed.
    pub fn load_flat(&mut self, flat: &[F]) -> usize {
        let mut offset = 0;
        for layer in &mut self.layers {
            let w_len = layer.weights.len();
            layer.weights.copy_from_slice(&flat[offset..offset + w_len]);
            offset += w_len;
            let b_len = layer.biases.len();
            layer.biases.copy_from_slice(&flat[offset..offset + b_len]);
            offset += b_len;
        }
        offset
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn forward_matches_hand_computation() {
        // 2 -> 2 -> 1 with known weights.
        let net = Mlp {
            layers: vec![
                Dense {
                    in_dim: 2,
                    out_dim: 2,
                    weights: vec![0.5, -0.25, 1.0, 0.75],
                    biases: vec![0.1, -0.2],
                },
                Dense {
                    in_dim: 2,
                    out_dim: 1,
                    weights: vec![2.0, -1.0],
                    biases: vec![0.05],
                },
            ],
        };
        let x = [0.3_f64, -0.6];
        let h0 = (0.5 * 0.3 + -0.25 * -0.6 + 0.1_f64).tanh();
        let h1 = (1.0 * 0.3 + 0.75 * -0.6 + -0.2_f64).tanh();
        let expected = 2.0 * h0 - 1.0 * h1 + 0.05;
        let out = net.forward(&x);
        assert!((out[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn backward_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net: Mlp<f64> = Mlp::orthogonal(&[3, 5, 4, 2], 1.0, &mut rng);
        let x = [0.2, -0.4, 0.9];
        // Scalar loss: weighted sum of outputs.
        let coeffs = [0.7, -1.3];
        let loss = |net: &Mlp<f64>| -> f64 {
            let out = net.forward(&x);
            out.iter().zip(&coeffs).map(|(o, c)| o * c).sum()
        };

        let cache = net.forward_cached(&x);
        let mut grads = MlpGrads::zeros_like(&net);
        net.backward(&cache, &coeffs, &mut grads);
        let mut analytic = Vec::new();
        grads.extend_flat(&mut analytic);

        let mut flat = Vec::new();
        net.extend_flat(&mut flat);
        let h = 1e-6;
        for idx in 0..flat.len() {
            let orig = flat[idx];
            flat[idx] = orig + h;
            net.load_flat(&flat);
            let up = loss(&net);
            flat[idx] = orig - h;
            net.load_flat(&flat);
            let down = loss(&net);
            flat[idx] = orig;
            net.load_flat(&flat);
            let numeric = (up - down) / (2.0 * h);
            let denom = numeric.abs().max(analytic[idx].abs()).max(1e-8);
            assert!(
                ((numeric - analytic[idx]) / denom).abs() < 1e-5,
                "param {idx}: numeric {numeric} vs analytic {}",
                analytic[idx]
            );
        }
    }

    #[test]
    fn flat_round_trip_preserves_network() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net: Mlp<f64> = Mlp::orthogonal(&[4, 8, 8, 3], 0.01, &mut rng);
        let mut flat = Vec::new();
        net.extend_flat(&mut flat);
        assert_eq!(flat.len(), net.param_count());
        let mut other: Mlp<f64> = Mlp::orthogonal(&[4, 8, 8, 3], 0.01, &mut rng);
        let consumed = other.load_flat(&flat);
        assert_eq!(consumed, flat.len());
        assert_eq!(other, net);
    }

    #[test]
    fn orthogonal_init_has_orthonormal_rows_scaled_by_gain() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let gain = 1.5;
        let m = orthogonal_matrix(4, 16, gain, &mut rng);
        for r in 0..4 {
            for s in 0..4 {
                let dot: f64 = (0..16).map(|c| m[r * 16 + c] * m[s * 16 + c]).sum();
                let expected = if r == s { gain * gain } else { 0.0 };
                assert!((dot - expected).abs() < 1e-9, "rows {r},{s}: {dot}");
            }
        }
        // Tall case orthonormalizes columns instead.
        let m = orthogonal_matrix(16, 3, 1.0, &mut rng);
        for a in 0..3 {
            for b in 0..3 {
                let dot: f64 = (0..16).map(|r| m[r * 3 + a] * m[r * 3 + b]).sum();
                let expected = if a == b { 1.0 } else { 0.0 };
                assert!((dot - expected).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn same_seed_same_network() {
        let a: Mlp<f64> = Mlp::orthogonal(&[3, 6, 2], 0.01, &mut ChaCha8Rng::seed_from_u64(9));
        let b: Mlp<f64> = Mlp::orthogonal(&[3, 6, 2], 0.01, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }
}
