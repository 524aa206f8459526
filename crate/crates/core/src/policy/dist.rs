//! Action distributions over `[-1, 1]^4`: a Beta head (sampled in `(0, 1)`
//! and mapped by `a = 2u - 1`) and a truncated-normal head.

use std::f64::consts::{LN_2, PI};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::special::{
    digamma, ln_beta, normal_cdf, normal_cdf_derivative, normal_pdf, sigmoid, softplus, trigamma,
};
use crate::error::{Error, Result};

pub const ACTION_DIM: usize = 4;
/// Raw network outputs per action: two distribution parameters per dim.
pub const HEAD_WIDTH: usize = 2 * ACTION_DIM;

const MIN_SIGMA: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Beta,
    TruncatedNormal,
}

/// `ln` density of Beta(α, β) at `u`.
pub fn beta_log_prob(alpha: f64, beta: f64, u: f64) -> Result<f64> {
    if !(alpha > 0.0 && beta > 0.0) {
        return Err(Error::Domain(format!("Beta parameters must be positive, got ({alpha}, {beta})")));
    }
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::Domain(format!("Beta support is (0, 1), got {u}")));
    }
    Ok((alpha - 1.0) * u.ln() + (beta - 1.0) * (-u).ln_1p() - ln_beta(alpha, beta))
}

/// Differential entropy of Beta(α, β).
pub fn beta_entropy(alpha: f64, beta: f64) -> f64 {
    let s = alpha + beta;
    ln_beta(alpha, beta) - (alpha - 1.0) * digamma(alpha) - (beta - 1.0) * digamma(beta) + (s - 2.0) * digamma(s)
}

/// Marsaglia–Tsang Gamma(shape, 1) sampler (boosted for shape < 1).
pub fn sample_gamma(shape: f64, rng: &mut (impl Rng + ?Sized)) -> f64 {
    if shape < 1.0 {
        let u: f64 = rng.random();
        return sample_gamma(shape + 1.0, rng) * u.powf(1.0 / shape);
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x: f64 = StandardNormal.sample(rng);
        let v = 1.0 + c * x;
        if v <= 0.0 {
            continue;
        }
        let v = v * v * v;
        let u: f64 = rng.random();
        if u < 1.0 - 0.0331 * x.powi(4) || u.ln() < 0.5 * x * x + d * (1.0 - v + v.ln()) {
            return d * v;
        }
    }
}

pub fn sample_beta(alpha: f64, beta: f64, rng: &mut (impl Rng + ?Sized)) -> f64 {
    let x = sample_gamma(alpha, rng);
    let y = sample_gamma(beta, rng);
    x / (x + y)
}

fn tn_check(mu: f64, sigma: f64) -> Result<()> {
    if !(sigma.is_finite() && sigma > 0.0 && mu.is_finite()) {
        return Err(Error::Domain(format!("truncated normal needs finite μ and σ > 0, got ({mu}, {sigma})")));
    }
    Ok(())
}

/// Probability mass of N(μ, σ²) on `[-1, 1]`.
fn tn_mass(mu: f64, sigma: f64) -> f64 {
    normal_cdf((1.0 - mu) / sigma) - normal_cdf((-1.0 - mu) / sigma)
}

/// `ln` density of N(μ, σ²) truncated to `[-1, 1]` at `x`.
pub fn trunc_normal_log_prob(mu: f64, sigma: f64, x: f64) -> Result<f64> {
    tn_check(mu, sigma)?;
    if !(-1.0..=1.0).contains(&x) {
        return Err(Error::Domain(format!("{x} outside [-1, 1]")));
    }
    let z = (x - mu) / sigma;
    Ok(-0.5 * z * z - 0.5 * (2.0 * PI).ln() - sigma.ln() - tn_mass(mu, sigma).ln())
}

pub fn trunc_normal_entropy(mu: f64, sigma: f64) -> Result<f64> {
    tn_check(mu, sigma)?;
    let a = (-1.0 - mu) / sigma;
    let b = (1.0 - mu) / sigma;
    let z = tn_mass(mu, sigma);
    Ok(0.5 * (2.0 * PI * std::f64::consts::E).ln() + sigma.ln() + z.ln() + (a * normal_pdf(a) - b * normal_pdf(b)) / (2.0 * z))
}

/// Exact rejection sampler: normal proposals when most mass is inside the
/// interval, uniform proposals otherwise.
pub fn trunc_normal_sample(mu: f64, sigma: f64, rng: &mut (impl Rng + ?Sized)) -> Result<f64> {
    tn_check(mu, sigma)?;
    if tn_mass(mu, sigma) > 0.3 {
        loop {
            let n: f64 = StandardNormal.sample(rng);
            let x = mu + sigma * n;
            if (-1.0..=1.0).contains(&x) {
                return Ok(x);
            }
        }
    }
    let peak = mu.clamp(-1.0, 1.0);
    loop {
        let x = rng.random_range(-1.0..=1.0);
        let u: f64 = rng.random();
        let log_ratio = (-0.5 * ((x - mu) / sigma).powi(2)) - (-0.5 * ((peak - mu) / sigma).powi(2));
        if u.ln() < log_ratio {
            return Ok(x);
        }
    }
}

/// Gradient of the truncated-normal log density and entropy with respect
/// to (μ, σ).
fn tn_grads(mu: f64, sigma: f64, x: f64) -> ([f64; 2], [f64; 2]) {
    let a = (-1.0 - mu) / sigma;
    let b = (1.0 - mu) / sigma;
    let xi = (x - mu) / sigma;
    let (pa, pb) = (normal_pdf(a), normal_pdf(b));
    // The mass uses the erf approximation; differentiate that, not Φ.
    let (ca, cb) = (normal_cdf_derivative(a), normal_cdf_derivative(b));
    let z = tn_mass(mu, sigma);
    let dlp_mu = xi / sigma + (cb - ca) / (sigma * z);
    let dlp_sigma = (xi * xi - 1.0) / sigma + (b * cb - a * ca) / (sigma * z);
    let n = a * pa - b * pb;
    // Arguments are d/dθ of A, B and σ for θ = μ and θ = σ.
    let dent = |da: f64, db: f64, ds: f64| {
        let dz = cb * db - ca * da;
        let dn = pa * (1.0 - a * a) * da - pb * (1.0 - b * b) * db;
        ds / sigma + dz / z + (dn * z - n * dz) / (2.0 * z * z)
    };
    let dh_mu = dent(-1.0 / sigma, -1.0 / sigma, 0.0);
    let dh_sigma = dent(-a / sigma, -b / sigma, 1.0);
    ([dlp_mu, dlp_sigma], [dh_mu, dh_sigma])
}

/// A sampled action with its log probability under the sampling policy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionSample {
    /// Draws in the distribution's native support (`(0, 1)` for Beta).
    pub u: [f64; ACTION_DIM],
    pub action: [f64; ACTION_DIM],
    pub log_prob: f64,
}

/// Per-dimension distribution parameters produced by the actor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ActionDist {
    Beta { alpha: [f64; ACTION_DIM], beta: [f64; ACTION_DIM] },
    TruncNormal { mu: [f64; ACTION_DIM], sigma: [f64; ACTION_DIM] },
}

impl ActionDist {
    /// Maps raw actor outputs: α, β = 1 + softplus(raw) for Beta;
    /// μ = tanh(raw), σ = softplus(raw) + 1e-3 for the truncated normal.
    pub fn from_raw(kind: HeadKind, raw: &[f64]) -> Result<Self> {
        if raw.len() != HEAD_WIDTH {
            return Err(Error::ShapeMismatch {
                expected: HEAD_WIDTH,
                got: raw.len(),
            });
        }
        let mut p = [0.0; ACTION_DIM];
        let mut q = [0.0; ACTION_DIM];
        Ok(match kind {
            HeadKind::Beta => {
                for i in 0..ACTION_DIM {
                    p[i] = 1.0 + softplus(raw[i]);
                    q[i] = 1.0 + softplus(raw[ACTION_DIM + i]);
                }
                ActionDist::Beta { alpha: p, beta: q }
            }
            HeadKind::TruncatedNormal => {
                for i in 0..ACTION_DIM {
                    p[i] = raw[i].tanh();
                    q[i] = softplus(raw[ACTION_DIM + i]) + MIN_SIGMA;
                }
                ActionDist::TruncNormal { mu: p, sigma: q }
            }
        })
    }

    pub fn sample(&self, rng: &mut (impl Rng + ?Sized)) -> Result<ActionSample> {
        let mut u = [0.0; ACTION_DIM];
        let mut action = [0.0; ACTION_DIM];
        for i in 0..ACTION_DIM {
            match self {
                ActionDist::Beta { alpha, beta } => loop {
                    let draw = sample_beta(alpha[i], beta[i], rng);
                    let a = 2.0 * draw - 1.0;
                    // Draws that round onto the boundary are redrawn, never clipped.
                    if a > -1.0 && a < 1.0 {
                        u[i] = draw;
                        action[i] = a;
                        break;
                    }
                },
                ActionDist::TruncNormal { mu, sigma } => {
                    action[i] = trunc_normal_sample(mu[i], sigma[i], rng)?;
                    u[i] = action[i];
                }
            }
        }
        let log_prob = self.log_prob(&action)?;
        Ok(ActionSample { u, action, log_prob })
    }

    /// Joint log density of `action` in `[-1, 1]^4` (the Beta head includes
    /// the `-4 ln 2` change of variables).
    pub fn log_prob(&self, action: &[f64; ACTION_DIM]) -> Result<f64> {
        let mut total = 0.0;
        for i in 0..ACTION_DIM {
            total += match self {
                ActionDist::Beta { alpha, beta } => beta_log_prob(alpha[i], beta[i], 0.5 * (action[i] + 1.0))? - LN_2,
                ActionDist::TruncNormal { mu, sigma } => trunc_normal_log_prob(mu[i], sigma[i], action[i])?,
            };
        }
        Ok(total)
    }

    /// Sum of per-dimension entropies in the native support.
    pub fn entropy(&self) -> Result<f64> {
        let mut total = 0.0;
        for i in 0..ACTION_DIM {
            total += match self {
                ActionDist::Beta { alpha, beta } => beta_entropy(alpha[i], beta[i]),
                ActionDist::TruncNormal { mu, sigma } => trunc_normal_entropy(mu[i], sigma[i])?,
            };
        }
        Ok(total)
    }

    /// Most likely action (interior for α, β > 1).
    pub fn mode(&self) -> [f64; ACTION_DIM] {
        let mut out = [0.0; ACTION_DIM];
        for i in 0..ACTION_DIM {
            out[i] = match self {
                ActionDist::Beta { alpha, beta } => {
                    let s = alpha[i] + beta[i] - 2.0;
                    let u = if s > 1e-12 { (alpha[i] - 1.0) / s } else { 0.5 };
                    2.0 * u - 1.0
                }
                ActionDist::TruncNormal { mu, .. } => mu[i].clamp(-1.0, 1.0),
            };
        }
        out
    }

    /// Gradient of `w_logp · log_prob(action) + w_ent · entropy()` with
    /// respect to the raw actor outputs.
    pub fn raw_gradient(&self, raw: &[f64], action: &[f64; ACTION_DIM], w_logp: f64, w_ent: f64) -> [f64; HEAD_WIDTH] {
        let mut g = [0.0; HEAD_WIDTH];
        for i in 0..ACTION_DIM {
            match self {
                ActionDist::Beta { alpha, beta } => {
                    let (a, b) = (alpha[i], beta[i]);
                    let u = 0.5 * (action[i] + 1.0);
                    let ps = digamma(a + b);
                    let ts = trigamma(a + b);
                    let dlp_a = u.ln() - digamma(a) + ps;
                    let dlp_b = (-u).ln_1p() - digamma(b) + ps;
                    let dh_a = -(a - 1.0) * trigamma(a) + (a + b - 2.0) * ts;
                    let dh_b = -(b - 1.0) * trigamma(b) + (a + b - 2.0) * ts;
                    g[i] = (w_logp * dlp_a + w_ent * dh_a) * sigmoid(raw[i]);
                    g[ACTION_DIM + i] = (w_logp * dlp_b + w_ent * dh_b) * sigmoid(raw[ACTION_DIM + i]);
                }
                ActionDist::TruncNormal { mu, sigma } => {
                    let (dlp, dh) = tn_grads(mu[i], sigma[i], action[i]);
                    g[i] = (w_logp * dlp[0] + w_ent * dh[0]) * (1.0 - mu[i] * mu[i]);
                    g[ACTION_DIM + i] = (w_logp * dlp[1] + w_ent * dh[1]) * sigmoid(raw[ACTION_DIM + i]);
                }
            }
        }
        g
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Tanh-sinh quadrature of `f` over `(0, 1/2)`; nodes near 0 are
    /// computed without cancellation.
    pub(crate) fn tanh_sinh_lower_half(f: impl Fn(f64) -> f64) -> f64 {
        // u = (1 + tanh(π/2 sinh t)) / 4
        let h = 1.0 / 64.0;
        let mut sum = 0.0;
        for k in -400i64..=400 {
            let t = k as f64 * h;
            let s = 0.5 * PI * t.sinh();
            let u = 0.5 / (1.0 + (-2.0 * s).exp());
            let weight = 0.25 * 0.5 * PI * t.cosh() / s.cosh().powi(2);
            if u <= 0.0 || u >= 0.5 || !weight.is_finite() || weight < 1e-300 {
                continue;
            }
            sum += f(u) * weight;
        }
        sum * h
    }

    /// ∫₀¹ g(u, 1-u) du using the mirrored lower half for the upper half.
    pub(crate) fn integrate_unit(g: impl Fn(f64, f64) -> f64) -> f64 {
        tanh_sinh_lower_half(|u| g(u, 1.0 - u)) + tanh_sinh_lower_half(|v| g(1.0 - v, v))
    }

    #[test]
    fn uniform_beta() {
        assert_eq!(beta_entropy(1.0, 1.0), 0.0);
        assert_eq!(beta_log_prob(1.0, 1.0, 0.3).unwrap(), 0.0);
        let d = ActionDist::Beta {
            alpha: [1.0; 4],
            beta: [1.0; 4],
        };
        let lp = d.log_prob(&[0.3, -0.9, 0.0, 0.77]).unwrap();
        assert!((lp + 4.0 * LN_2).abs() < 1e-15);
    }

    #[test]
    fn beta_two_two_values() {
        assert!((beta_log_prob(2.0, 2.0, 0.5).unwrap() - 1.5f64.ln()).abs() < 1e-13);
        let quad = -integrate_unit(|u, _| {
            let p = 6.0 * u * (1.0 - u);
            if p > 0.0 {
                p * p.ln()
            } else {
                0.0
            }
        });
        assert!((beta_entropy(2.0, 2.0) - quad).abs() < 1e-9, "{} vs {quad}", beta_entropy(2.0, 2.0));
        assert!((beta_entropy(2.0, 2.0) + 0.125_092_802_561_388).abs() < 1e-12);
    }

    #[test]
    fn beta_domain_errors() {
        assert!(matches!(beta_log_prob(2.0, 2.0, 0.0), Err(Error::Domain(_))));
        assert!(matches!(beta_log_prob(2.0, 2.0, 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn beta_sample_mean() {
        let d = ActionDist::Beta {
            alpha: [5.0, 2.0, 2.0, 2.0],
            beta: [2.0; 4],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let s = d.sample(&mut rng).unwrap();
            assert!(s.action.iter().all(|a| *a > -1.0 && *a < 1.0));
            assert_eq!(s.action[0], 2.0 * s.u[0] - 1.0);
            sum += s.action[0];
        }
        let mean = sum / n as f64;
        // Var(a) = 4·αβ / ((α+β)²(α+β+1))
        let sd = (4.0 * 10.0 / (49.0 * 8.0) / n as f64).sqrt();
        assert!((mean - 3.0 / 7.0).abs() < 3.0 * sd, "{mean}");
    }

    #[test]
    fn truncated_normal_limits() {
        // Wide σ approaches the uniform density on [-1, 1].
        for x in [-0.9, 0.0, 0.5] {
            assert!((trunc_normal_log_prob(0.0, 100.0, x).unwrap() + LN_2).abs() < 1e-3);
        }
        let mass = integrate_unit(|u, _| trunc_normal_log_prob(0.0, 1.0, 2.0 * u - 1.0).unwrap().exp() * 2.0);
        assert!((mass - 1.0).abs() < 1e-6, "{mass}");
        assert!(matches!(trunc_normal_log_prob(0.0, 0.0, 0.1), Err(Error::Domain(_))));
    }

    #[test]
    fn truncated_normal_samples_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for (mu, sigma) in [(0.0, 1.0), (0.9, 0.05), (-0.5, 100.0), (0.99, 3.0)] {
            for _ in 0..20_000 {
                let x = trunc_normal_sample(mu, sigma, &mut rng).unwrap();
                assert!((-1.0..=1.0).contains(&x));
            }
        }
    }

    #[test]
    fn truncated_normal_entropy_matches_quadrature() {
        for (mu, sigma) in [(0.0, 1.0), (0.4, 0.3), (-0.8, 2.0)] {
            let quad = -integrate_unit(|u, _| {
                let x = 2.0 * u - 1.0;
                let lp = trunc_normal_log_prob(mu, sigma, x).unwrap();
                2.0 * lp.exp() * lp
            });
            // The normalizer uses an erf approximation accurate to 1.5e-7.
            assert!((trunc_normal_entropy(mu, sigma).unwrap() - quad).abs() < 1e-5);
        }
    }

    #[test]
    fn raw_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for kind in [HeadKind::Beta, HeadKind::TruncatedNormal] {
            for _ in 0..50 {
                let raw: Vec<f64> = (0..HEAD_WIDTH).map(|_| rng.random_range(-2.0..2.0)).collect();
                let d = ActionDist::from_raw(kind, &raw).unwrap();
                let action = d.sample(&mut rng).unwrap().action;
                let (wl, we) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                let f = |r: &[f64]| {
                    let d = ActionDist::from_raw(kind, r).unwrap();
                    wl * d.log_prob(&action).unwrap() + we * d.entropy().unwrap()
                };
                let g = d.raw_gradient(&raw, &action, wl, we);
                for i in 0..HEAD_WIDTH {
                    let h = 1e-5;
                    let mut up = raw.clone();
                    up[i] += h;
                    let mut dn = raw.clone();
                    dn[i] -= h;
                    let fd = (f(&up) - f(&dn)) / (2.0 * h);
                    let err = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-4);
                    assert!(err < 1e-4, "{kind:?} raw {i}: fd {fd} analytic {}", g[i]);
                }
            }
        }
    }

    #[test]
    fn beta_mode_is_interior() {
        let raw = [0.3, -2.0, 5.0, 0.0, 1.0, 1.0, -3.0, 0.0];
        let d = ActionDist::from_raw(HeadKind::Beta, &raw).unwrap();
        assert!(d.mode().iter().all(|a| *a > -1.0 && *a < 1.0));
    }
}
