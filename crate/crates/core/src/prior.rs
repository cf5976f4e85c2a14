//! The denoiser prior `D(s, sigma)` behind the sampler, with exact
//! vector-Jacobian products.
//!
//! The sampler touches a prior only through [`Denoiser::apply`] and
//! [`Denoiser::vjp`]; anything satisfying those two (a trained model, the
//! analytic priors here) drops in. The analytic implementations make the
//! whole sampling chain verifiable: their Jacobians are known in closed form.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub trait Denoiser: Send + Sync {
    /// Posterior-mean estimate of the clean signal given `noisy` at noise
    /// level `sigma`. Deterministic.
    fn apply(&self, noisy: &[f64], sigma: f64) -> Vec<f64>;

    /// Action of the transposed Jacobian of [`Denoiser::apply`] at
    /// `(noisy, sigma)` on `cotangent`.
    fn vjp(&self, noisy: &[f64], sigma: f64, cotangent: &[f64]) -> Vec<f64>;
}

/// Tweedie's formula: the score of the sigma-smoothed prior,
/// `(D(s, sigma) - s) / sigma^2`.
pub fn tweedie_score(denoiser: &dyn Denoiser, s_tau: &[f64], sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidSigma(sigma));
    }
    let denoised = denoiser.apply(s_tau, sigma);
    let inv = 1.0 / (sigma * sigma);
    Ok(denoised
        .iter()
        .zip(s_tau)
        .map(|(d, s)| (d - s) * inv)
        .collect())
}

/// Prior `N(0, prior_variance I)`: the posterior mean shrinks the input by
/// `prior_variance / (prior_variance + sigma^2)`.
#[derive(Debug, Clone, Copy)]
pub struct GaussianShrinkageDenoiser {
    pub prior_variance: f64,
}

impl GaussianShrinkageDenoiser {
    pub fn new(prior_variance: f64) -> Result<Self> {
        if !(prior_variance > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "prior variance must be > 0, got {prior_variance}"
            )));
        }
        Ok(Self { prior_variance })
    }

    fn gain(&self, sigma: f64) -> f64 {
        self.prior_variance / (self.prior_variance + sigma * sigma)
    }
}

impl Denoiser for GaussianShrinkageDenoiser {
    fn apply(&self, noisy: &[f64], sigma: f64) -> Vec<f64> {
        let g = self.gain(sigma);
        noisy.iter().map(|v| g * v).collect()
    }

    fn vjp(&self, _noisy: &[f64], sigma: f64, cotangent: &[f64]) -> Vec<f64> {
        let g = self.gain(sigma);
        cotangent.iter().map(|v| g * v).collect()
    }
}

/// Test prior that pulls toward a known target:
/// `D(s, sigma) = target + w(sigma) (s - target)` with
/// `w(sigma) = (sigma_floor / (sigma + sigma_floor))^blend_exp`.
///
/// `blend_exp = inf` gives full pull (`D == target` for any `sigma > 0`),
/// which lets sampler tests demand exact recovery.
#[derive(Debug, Clone)]
pub struct OracleDenoiser {
    target: Vec<f64>,
    sigma_floor: f64,
    blend_exp: f64,
}

pub const ORACLE_SIGMA_FLOOR: f64 = 1e-3;

impl OracleDenoiser {
    pub fn partial(target: Vec<f64>) -> Self {
        Self {
            target,
            sigma_floor: ORACLE_SIGMA_FLOOR,
            blend_exp: 1.0,
        }
    }

    pub fn full_pull(target: Vec<f64>) -> Self {
        Self {
            target,
            sigma_floor: ORACLE_SIGMA_FLOOR,
            blend_exp: f64::INFINITY,
        }
    }

    pub fn with_blend(target: Vec<f64>, blend_exp: f64) -> Self {
        Self {
            target,
            sigma_floor: ORACLE_SIGMA_FLOOR,
            blend_exp,
        }
    }

    /// One oracle per source, sharing the pull settings.
    pub fn bank(targets: &[Vec<f64>], blend_exp: f64) -> Vec<Self> {
        targets
            .iter()
            .map(|t| Self::with_blend(t.clone(), blend_exp))
            .collect()
    }

    fn weight(&self, sigma: f64) -> f64 {
        (self.sigma_floor / (sigma + self.sigma_floor)).powf(self.blend_exp)
    }
}

impl Denoiser for OracleDenoiser {
    fn apply(&self, noisy: &[f64], sigma: f64) -> Vec<f64> {
        assert_eq!(noisy.len(), self.target.len(), "oracle target length");
        let w = self.weight(sigma);
        self.target
            .iter()
            .zip(noisy)
            .map(|(t, s)| t + w * (s - t))
            .collect()
    }

    fn vjp(&self, _noisy: &[f64], sigma: f64, cotangent: &[f64]) -> Vec<f64> {
        let w = self.weight(sigma);
        cotangent.iter().map(|v| w * v).collect()
    }
}

/// Compares [`Denoiser::vjp`] against central finite differences along
/// random probe directions; returns the worst relative error.
pub fn vjp_check(
    denoiser: &dyn Denoiser,
    s: &[f64],
    sigma: f64,
    n_probes: usize,
    seed: u64,
) -> Result<f64> {
    if n_probes == 0 {
        return Err(Error::InvalidParameter("n_probes must be >= 1".into()));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let n = s.len();
    let h = 1e-4;
    let mut worst = 0.0f64;
    for _ in 0..n_probes {
        let v = random_unit(&mut rng, n);
        let w = random_unit(&mut rng, n);
        let mut plus = s.to_vec();
        let mut minus = s.to_vec();
        for t in 0..n {
            plus[t] += h * v[t];
            minus[t] -= h * v[t];
        }
        let d_plus = denoiser.apply(&plus, sigma);
        let d_minus = denoiser.apply(&minus, sigma);
        // <w, J v> by finite differences vs <J^T w, v> from the vjp
        let lhs: f64 = w
            .iter()
            .zip(d_plus.iter().zip(&d_minus))
            .map(|(wi, (p, m))| wi * (p - m) / (2.0 * h))
            .sum();
        let jt_w = denoiser.vjp(s, sigma, &w);
        let rhs: f64 = jt_w.iter().zip(&v).map(|(a, b)| a * b).sum();
        let denom = lhs.abs().max(rhs.abs()).max(1e-12);
        worst = worst.max((lhs - rhs).abs() / denom);
    }
    Ok(worst)
}

fn random_unit(rng: &mut ChaCha12Rng, n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in &mut v {
            *x /= norm;
        }
    }
    v
}
