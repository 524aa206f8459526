use serde::{Deserialize, Serialize};

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Scales all gradient blocks by `max / ‖g‖` when the joint norm exceeds
/// `max`. Returns the norm before clipping.
pub fn clip_global_norm(blocks: &mut [&mut [f64]], max: f64) -> f64 {
    let norm = blocks.iter().flat_map(|b| b.iter()).map(|g| g * g).sum::<f64>().sqrt();
    if norm > max {
        let scale = max / norm;
        for b in blocks.iter_mut() {
            for g in b.iter_mut() {
                *g *= scale;
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clipping() {
        let mut g = vec![0.6, 0.8];
        let norm = clip_global_norm(&mut [&mut g], 0.5);
        assert_eq!(norm, 1.0);
        assert_eq!(g, vec![0.3, 0.4]);
        let mut a = vec![0.3];
        let mut b = vec![0.0];
        clip_global_norm(&mut [&mut a, &mut b], 0.5);
        assert_eq!(a, vec![0.3]);
    }

    #[test]
    fn adam_converges_on_quadratic() {
        let target = 3.0;
        let mut x = vec![0.0];
        let mut opt = Adam::new(1, 1e-2);
        for _ in 0..1000 {
            let g = vec![2.0 * (x[0] - target)];
            opt.step(&mut x, &g);
        }
        assert!((x[0] - target).abs() < 1e-3, "{}", x[0]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut x = vec![1.0, -1.0];
        let mut opt = Adam::new(2, 0.1);
        opt.step(&mut x, &[5.0, -0.01]);
        assert!((x[0] - 0.9).abs() < 1e-6);
        assert!((x[1] + 0.9).abs() < 1e-5);
    }
}
