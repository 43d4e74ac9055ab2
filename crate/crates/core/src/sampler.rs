//! Noise schedule, classifier-free guidance and the Euler-discrete step.
//!
//! Latents follow the sigma parameterisation `x = x0 + sigma * eps`; the
//! estimator sees `x / sqrt(sigma^2 + 1)` and predicts `eps`.

use crate::error::{Error, Result};
use crate::tensor::LatentTensor;

pub const DEFAULT_TRAIN_STEPS: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    sigmas: Vec<f64>,
    timesteps: Vec<usize>,
}

impl NoiseSchedule {
    /// Builds a schedule from explicit values, e.g. sigmas recorded alongside a trace.
    pub fn from_parts(sigmas: Vec<f64>, timesteps: Vec<usize>) -> Result<Self> {
        if timesteps.is_empty() || sigmas.len() != timesteps.len() + 1 {
            return Err(Error::InvalidArgument(format!(
                "schedule needs num_steps >= 1 and num_steps + 1 sigmas, got {} sigmas for {} timesteps",
                sigmas.len(),
                timesteps.len()
            )));
        }
        if sigmas.last() != Some(&0.0) {
            return Err(Error::InvalidArgument(
                "final sigma must be exactly 0".into(),
            ));
        }
        if sigmas.windows(2).any(|w| !(w[0] > w[1])) {
            return Err(Error::InvalidArgument(
                "sigmas must be strictly decreasing".into(),
            ));
        }
        Ok(Self { sigmas, timesteps })
    }

    pub fn num_steps(&self) -> usize {
        self.timesteps.len()
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn timesteps(&self) -> &[usize] {
        &self.timesteps
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigmas[0]
    }

    /// Standard deviation of the initial latent, `sqrt(sigma_max^2 + 1)`.
    pub fn init_noise_sigma(&self) -> f64 {
        (self.sigma_max() * self.sigma_max() + 1.0).sqrt()
    }
}

/// Classifier-free guidance weight `s`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct GuidanceScale(f64);

impl GuidanceScale {
    pub fn new(s: f64) -> Result<Self> {
        if !(s >= 0.0) || !s.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "guidance scale must be finite and >= 0, got {s}"
            )));
        }
        Ok(Self(s))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for GuidanceScale {
    fn default() -> Self {
        Self(4.5)
    }
}

/// Cumulative products of `1 - beta_t` for linearly spaced betas.
pub fn alphas_cumprod(beta_start: f64, beta_end: f64, num_train_steps: usize) -> Vec<f64> {
    let mut acc = 1.0;
    (0..num_train_steps)
        .map(|i| {
            let beta = if num_train_steps == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * i as f64 / (num_train_steps - 1) as f64
            };
            acc *= 1.0 - beta;
            acc
        })
        .collect()
}

/// Sigma of a training timestep under the given cumulative-alpha table.
pub fn sigma_at(alphas_cumprod: &[f64], timestep: usize) -> f64 {
    let a = alphas_cumprod[timestep];
    ((1.0 - a) / a).sqrt()
}

pub fn build_schedule(
    num_steps: usize,
    beta_start: f64,
    beta_end: f64,
    num_train_steps: usize,
) -> Result<NoiseSchedule> {
    if num_steps == 0 || num_steps > num_train_steps {
        return Err(Error::InvalidArgument(format!(
            "num_steps must be in 1..={num_train_steps}, got {num_steps}"
        )));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "betas must satisfy 0 < start <= end < 1, got {beta_start}..{beta_end}"
        )));
    }
    let cumprod = alphas_cumprod(beta_start, beta_end, num_train_steps);
    let stride = num_train_steps / num_steps;
    // Ascending indices 0, stride, 2*stride, ..., shifted so the last one is T-1.
    let offset = num_train_steps - 1 - (num_steps - 1) * stride;
    let timesteps: Vec<usize> = (0..num_steps).rev().map(|i| i * stride + offset).collect();
    let mut sigmas: Vec<f64> = timesteps.iter().map(|&t| sigma_at(&cumprod, t)).collect();
    sigmas.push(0.0);
    NoiseSchedule::from_parts(sigmas, timesteps)
}

pub fn default_schedule(num_steps: usize) -> Result<NoiseSchedule> {
    build_schedule(
        num_steps,
        DEFAULT_BETA_START,
        DEFAULT_BETA_END,
        DEFAULT_TRAIN_STEPS,
    )
}

/// `eps_uncond + s * (eps_cond - eps_uncond)`.
pub fn cfg_combine(
    eps_uncond: &LatentTensor,
    eps_cond: &LatentTensor,
    s: GuidanceScale,
) -> Result<LatentTensor> {
    let s = s.value();
    eps_uncond.zip_map(eps_cond, |u, c| (1.0 - s) * u + s * c)
}

/// One deterministic Euler step with derivative `eps_hat`.
pub fn euler_step(
    x_t: &LatentTensor,
    eps_hat: &LatentTensor,
    sigma_t: f64,
    sigma_next: f64,
) -> Result<LatentTensor> {
    if !(sigma_next >= 0.0 && sigma_t >= sigma_next) {
        return Err(Error::InvalidArgument(format!(
            "euler step needs sigma_t >= sigma_next >= 0, got {sigma_t} -> {sigma_next}"
        )));
    }
    let dt = sigma_next - sigma_t;
    x_t.zip_map(eps_hat, |x, d| x + dt * d)
}

pub fn scale_model_input(x_t: &LatentTensor, sigma_t: f64) -> LatentTensor {
    let denom = (sigma_t * sigma_t + 1.0).sqrt();
    x_t.map(|v| v / denom)
}
