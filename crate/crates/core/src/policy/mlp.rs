//! Fully connected network with tanh hidden layers and a linear output,
//! stored as one flat parameter vector.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Activations recorded by [`Mlp::forward_cached`] for the backward pass.
#[derive(Clone, Debug, Default)]
pub struct MlpCache {
    layers: Vec<Vec<f64>>,
    /// Indices of the nonzero network inputs.
    nonzero: Vec<usize>,
}

impl Mlp {
    /// `sizes` = input, hidden..., output.
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidConfig(format!("bad layer sizes {sizes:?}")));
        }
        let count = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Ok(Self {
            sizes: sizes.to_vec(),
            params: vec![0.0; count],
        })
    }

    /// Uniform fan-in initialization; the output layer is scaled by
    /// `output_scale`. Biases start at zero.
    pub fn random(sizes: &[usize], output_scale: f64, rng: &mut (impl Rng + ?Sized)) -> Result<Self> {
        let mut mlp = Self::zeros(sizes)?;
        let layers = sizes.len() - 1;
        let mut offset = 0;
        for l in 0..layers {
            let (n_in, n_out) = (sizes[l], sizes[l + 1]);
            let bound = (1.0 / n_in as f64).sqrt() * if l + 1 == layers { output_scale } else { 3f64.sqrt() };
            for w in &mut mlp.params[offset..offset + n_in * n_out] {
                *w = rng.random_range(-1.0..=1.0) * bound;
            }
            offset += n_in * n_out + n_out;
        }
        Ok(mlp)
    }

    pub fn from_params(sizes: &[usize], params: Vec<f64>) -> Result<Self> {
        let mut mlp = Self::zeros(sizes)?;
        if params.len() != mlp.params.len() {
            return Err(Error::ShapeMismatch {
                expected: mlp.params.len(),
                got: params.len(),
            });
        }
        mlp.params = params;
        Ok(mlp)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Weights (row-major `out × in`) and biases of layer `l`.
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let offset: usize = self.sizes.windows(2).take(l).map(|w| w[0] * w[1] + w[1]).sum();
        let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
        let w = &self.params[offset..offset + n_in * n_out];
        let b = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
        (w, b)
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut cache = MlpCache::default();
        self.forward_cached(x, &mut cache)
    }

    pub fn forward_cached(&self, x: &[f64], cache: &mut MlpCache) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::ShapeMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let layers = self.sizes.len() - 1;
        cache.layers.resize(layers + 1, Vec::new());
        cache.layers[0].clear();
        cache.layers[0].extend_from_slice(x);
        let mut offset = 0;
        for l in 0..layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[offset..offset + n_in * n_out];
            let b = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            let (before, after) = cache.layers.split_at_mut(l + 1);
            let input = &before[l];
            let out = &mut after[0];
            out.clear();
            if l == 0 {
                // Observations are mostly zero padding; skip those columns.
                cache.nonzero.clear();
                cache.nonzero.extend(input.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(j, _)| j));
                let nz = &cache.nonzero;
                out.extend(b.iter().enumerate().map(|(o, bias)| {
                    let row = &w[o * n_in..(o + 1) * n_in];
                    bias + nz.iter().map(|&j| row[j] * input[j]).sum::<f64>()
                }));
            } else {
                out.extend(b.iter().enumerate().map(|(o, bias)| bias + dot(&w[o * n_in..(o + 1) * n_in], input)));
            }
            if l + 1 < layers {
                for v in out.iter_mut() {
                    *v = v.tanh();
                }
            }
            offset += n_in * n_out + n_out;
        }
        Ok(cache.layers[layers].clone())
    }

    /// Accumulates `∂L/∂θ` into `grads` given `∂L/∂output` for the forward
    /// pass recorded in `cache`.
    pub fn backward(&self, cache: &MlpCache, grad_out: &[f64], grads: &mut [f64]) -> Result<()> {
        let layers = self.sizes.len() - 1;
        if cache.layers.len() != layers + 1 {
            return Err(Error::InvalidConfig("backward called without a forward pass".into()));
        }
        if grad_out.len() != self.output_dim() {
            return Err(Error::ShapeMismatch {
                expected: self.output_dim(),
                got: grad_out.len(),
            });
        }
        if grads.len() != self.params.len() {
            return Err(Error::ShapeMismatch {
                expected: self.params.len(),
                got: grads.len(),
            });
        }
        let mut delta = grad_out.to_vec();
        let mut offset = self.params.len();
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            offset -= n_in * n_out + n_out;
            let input = &cache.layers[l];
            let (gw, gb) = grads[offset..offset + n_in * n_out + n_out].split_at_mut(n_in * n_out);
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                let row = &mut gw[o * n_in..(o + 1) * n_in];
                if l == 0 {
                    for &j in &cache.nonzero {
                        row[j] += d * input[j];
                    }
                } else {
                    for (g, x) in row.iter_mut().zip(input) {
                        *g += d * x;
                    }
                }
            }
            if l == 0 {
                break;
            }
            let w = &self.params[offset..offset + n_in * n_out];
            let mut next = vec![0.0; n_in];
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                for (n, wv) in next.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                    *n += d * wv;
                }
            }
            // Hidden activations are tanh outputs: d tanh = 1 - y².
            for (n, y) in next.iter_mut().zip(input) {
                *n *= 1.0 - y * y;
            }
            delta = next;
        }
        Ok(())
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_output_biases() {
        let mut mlp = Mlp::zeros(&[3, 4, 2]).unwrap();
        let n = mlp.num_params();
        mlp.params_mut()[n - 2] = 0.7;
        mlp.params_mut()[n - 1] = -1.3;
        assert_eq!(mlp.forward(&[1.0, 2.0, 3.0]).unwrap(), vec![0.7, -1.3]);
    }

    #[test]
    fn single_layer_is_affine() {
        let params = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 0.5, -0.5];
        let mlp = Mlp::from_params(&[3, 2], params).unwrap();
        let y = mlp.forward(&[1.0, -1.0, 2.0]).unwrap();
        assert_eq!(y, vec![1.0 - 2.0 + 6.0 + 0.5, 4.0 - 5.0 + 12.0 - 0.5]);
    }

    #[test]
    fn shape_mismatch() {
        let mlp = Mlp::zeros(&[3, 2]).unwrap();
        assert!(matches!(mlp.forward(&[1.0]), Err(Error::ShapeMismatch { expected: 3, got: 1 })));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let mlp = Mlp::random(&[5, 7, 6, 3], 1.0, &mut rng).unwrap();
            let x: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let c: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let loss = |m: &Mlp| m.forward(&x).unwrap().iter().zip(&c).map(|(y, c)| y * c).sum::<f64>();
            let mut cache = MlpCache::default();
            mlp.forward_cached(&x, &mut cache).unwrap();
            let mut grads = vec![0.0; mlp.num_params()];
            mlp.backward(&cache, &c, &mut grads).unwrap();
            let h = 1e-5;
            for i in 0..mlp.num_params() {
                let mut p = mlp.clone();
                p.params_mut()[i] += h;
                let up = loss(&p);
                p.params_mut()[i] -= 2.0 * h;
                let down = loss(&p);
                let fd = (up - down) / (2.0 * h);
                let err = (fd - grads[i]).abs() / fd.abs().max(grads[i].abs()).max(1e-6);
                assert!(err < 1e-4, "param {i}: {fd} vs {}", grads[i]);
            }
        }
    }
}
