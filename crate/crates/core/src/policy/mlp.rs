//! Fully connected ReLU network with a scalar output and hand-written
//! backpropagation. Parameters live in one flat vector, layer by layer,
//! each layer as its row-major weight matrix followed by its bias.

use rand::Rng;
use serde::{Deserialize, Serialize};

pub const DEFAULT_HIDDEN: [usize; 2] = [128, 64];
pub const DEFAULT_DROPOUT: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpShape {
    pub input: usize,
    pub hidden: Vec<usize>,
    /// Dropout rate on hidden activations during training only.
    pub dropout: f64,
    /// Input standardisation; empty vectors mean identity.
    #[serde(default)]
    pub center: Vec<f64>,
    #[serde(default)]
    pub scale: Vec<f64>,
}

impl MlpShape {
    pub fn new(input: usize) -> MlpShape {
        MlpShape { input, hidden: DEFAULT_HIDDEN.to_vec(), dropout: DEFAULT_DROPOUT, center: vec![], scale: vec![] }
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input];
        w.extend(&self.hidden);
        w.push(1);
        w
    }

    pub fn param_count(&self) -> usize {
        self.widths().windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn standardize(&self, h: &[f64]) -> Vec<f64> {
        if self.center.is_empty() {
            return h.to_vec();
        }
        h.iter().zip(self.center.iter().zip(&self.scale)).map(|(x, (c, s))| (x - c) / s).collect()
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.param_count());
        for w in self.widths().windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                p.push(rng.random_range(-limit..limit));
            }
            p.extend(std::iter::repeat_n(0.0, fan_out));
        }
        p
    }

    /// Per-sample dropout masks for the hidden layers, already divided by the keep rate.
    pub fn sample_masks<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Vec<f64>> {
        let keep = 1.0 - self.dropout;
        self.hidden
            .iter()
            .map(|&n| (0..n).map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect())
            .collect()
    }

    /// Forward pass on an already standardised input.
    pub fn forward(&self, params: &[f64], x: &[f64]) -> f64 {
        self.forward_cached(params, x, None).output
    }

    pub fn forward_cached(&self, params: &[f64], x: &[f64], masks: Option<&[Vec<f64>]>) -> ForwardCache {
        let widths = self.widths();
        let mut acts: Vec<Vec<f64>> = vec![x.to_vec()];
        let mut off = 0;
        let last = widths.len() - 2;
        for (l, w) in widths.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let weights = &params[off..off + n_in * n_out];
            let bias = &params[off + n_in * n_out..off + n_in * n_out + n_out];
            off += n_in * n_out + n_out;
            let input = &acts[l];
            let mut out: Vec<f64> = weights
                .chunks_exact(n_in)
                .zip(bias)
                .map(|(row, b)| row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>() + b)
                .collect();
            if l < last {
                for v in out.iter_mut() {
                    *v = v.max(0.0);
                }
                if let Some(m) = masks {
                    for (v, k) in out.iter_mut().zip(&m[l]) {
                        *v *= k;
                    }
                }
            }
            acts.push(out);
        }
        let output = acts.last().unwrap()[0];
        ForwardCache { acts, output }
    }

    /// Adds `coef * ∂output/∂params` into `grad`.
    pub fn backward(
        &self,
        params: &[f64],
        cache: &ForwardCache,
        masks: Option<&[Vec<f64>]>,
        coef: f64,
        grad: &mut [f64],
    ) {
        let widths = self.widths();
        let mut offsets = Vec::with_capacity(widths.len() - 1);
        let mut off = 0;
        for w in widths.windows(2) {
            offsets.push(off);
            off += w[0] * w[1] + w[1];
        }
        let mut delta = vec![coef];
        for l in (0..widths.len() - 1).rev() {
            let (n_in, n_out) = (widths[l], widths[l + 1]);
            let off = offsets[l];
            let input = &cache.acts[l];
            for (j, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                let row = &mut grad[off + j * n_in..off + (j + 1) * n_in];
                for (g, a) in row.iter_mut().zip(input) {
                    *g += d * a;
                }
                grad[off + n_in * n_out + j] += d;
            }
            if l == 0 {
                break;
            }
            let weights = &params[off..off + n_in * n_out];
            let mut prev = vec![0.0; n_in];
            for (j, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                for (p, w) in prev.iter_mut().zip(&weights[j * n_in..(j + 1) * n_in]) {
                    *p += d * w;
                }
            }
            // through the mask and the ReLU of layer l (activation acts[l] is post-mask)
            for (i, p) in prev.iter_mut().enumerate() {
                let m = masks.map_or(1.0, |m| m[l - 1][i]);
                if cache.acts[l][i] <= 0.0 {
                    *p = 0.0;
                } else {
                    *p *= m;
                }
            }
            delta = prev;
        }
    }
}

pub struct ForwardCache {
    acts: Vec<Vec<f64>>,
    pub output: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> MlpShape {
        MlpShape { input: 3, hidden: vec![5, 4], dropout: 0.5, center: vec![], scale: vec![] }
    }

    #[test]
    fn param_count() {
        assert_eq!(small().param_count(), 3 * 5 + 5 + 5 * 4 + 4 + 4 + 1);
        assert_eq!(MlpShape::new(4).param_count(), 4 * 128 + 128 + 128 * 64 + 64 + 64 + 1);
    }

    #[test]
    fn zero_weights_give_zero() {
        let s = MlpShape::new(4);
        let p = vec![0.0; s.param_count()];
        assert_eq!(s.forward(&p, &[1.0, -2.0, 3.0, 0.5]), 0.0);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let s = small();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = s.init_params(&mut rng);
        for b in p.iter_mut() {
            if *b == 0.0 {
                *b = rng.random_range(-0.5..0.5);
            }
        }
        let x = [0.4, -1.3, 0.8];
        let cache = s.forward_cached(&p, &x, None);
        let mut g = vec![0.0; p.len()];
        s.backward(&p, &cache, None, 1.0, &mut g);
        let h = 1e-6;
        for i in 0..p.len() {
            let mut pp = p.clone();
            pp[i] += h;
            let up = s.forward(&pp, &x);
            pp[i] -= 2.0 * h;
            let dn = s.forward(&pp, &x);
            let fd = (up - dn) / (2.0 * h);
            let err = (fd - g[i]).abs() / g[i].abs().max(1e-8);
            assert!(err < 1e-4 || (fd - g[i]).abs() < 1e-9, "param {i}: fd {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn masked_gradient_matches_finite_differences() {
        let s = small();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        // nonzero biases keep every pre-activation off the ReLU kink
        let p: Vec<f64> = s.init_params(&mut rng).into_iter().map(|v| if v == 0.0 { 0.3 } else { v }).collect();
        let masks = s.sample_masks(&mut rng);
        let x = [1.0, 0.2, -0.7];
        let cache = s.forward_cached(&p, &x, Some(&masks));
        let mut g = vec![0.0; p.len()];
        s.backward(&p, &cache, Some(&masks), 2.0, &mut g);
        let h = 1e-6;
        for i in 0..p.len() {
            let mut pp = p.clone();
            pp[i] += h;
            let up = s.forward_cached(&pp, &x, Some(&masks)).output;
            pp[i] -= 2.0 * h;
            let dn = s.forward_cached(&pp, &x, Some(&masks)).output;
            let fd = 2.0 * (up - dn) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-6 * g[i].abs().max(1.0), "param {i}");
        }
    }

    #[test]
    fn deterministic_without_dropout() {
        let s = MlpShape::new(2);
        let p = s.init_params(&mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(s.forward(&p, &[0.3, 0.1]).to_bits(), s.forward(&p, &[0.3, 0.1]).to_bits());
    }
}
