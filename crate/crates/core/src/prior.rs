//! Spike-and-slab prior, reparameterized sampling and closed-form KL terms.
//!
//! The slab scale `s` is a standard deviation.

use rand::Rng;
use rand_distr::{Distribution, Open01, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, Tape, Var};
use crate::error::{NoradError, Result};
use crate::tensor::Tensor;

/// Bounds applied to encoder outputs.
pub const ETA_EPS: f64 = 1e-6;
pub const SIGMA_MIN: f64 = 1e-4;
pub const SIGMA_MAX: f64 = 1e4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpikeSlabPrior {
    pub delta: f64,
    pub u: f64,
    pub s: f64,
}

impl Default for SpikeSlabPrior {
    fn default() -> Self {
        SpikeSlabPrior {
            delta: 0.5,
            u: 0.0,
            s: 1.0,
        }
    }
}

impl SpikeSlabPrior {
    pub fn new(delta: f64, u: f64, s: f64) -> Result<Self> {
        let p = SpikeSlabPrior { delta, u, s };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(NoradError::Domain(format!(
                "spike probability must lie in (0, 1), got {}",
                self.delta
            )));
        }
        if !(self.s > 0.0) {
            return Err(NoradError::Domain(format!("slab stddev must be positive, got {}", self.s)));
        }
        Ok(())
    }
}

/// Per-node encoder outputs. `sigma` is derived from `log_sigma`.
#[derive(Clone, Debug, PartialEq)]
pub struct VariationalParams {
    pub eta: Tensor,
    pub mu: Tensor,
    pub log_sigma: Tensor,
}

impl VariationalParams {
    pub fn sigma(&self) -> Tensor {
        self.log_sigma.map(f64::exp)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentSample {
    pub c: Tensor,
    pub v: Tensor,
    pub z: Tensor,
}

impl LatentSample {
    pub fn compose(c: Tensor, v: Tensor) -> Result<Self> {
        if c.shape() != v.shape() {
            return Err(NoradError::dim("compose", c.shape(), v.shape()));
        }
        let z = c.zip_map(&v, |a, b| a * b);
        Ok(LatentSample { c, v, z })
    }
}

/// Frozen reparameterization noise: logistic draws enter through `uniform`,
/// standard normals through `normal`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReparamNoise {
    pub uniform: Tensor,
    pub normal: Tensor,
}

impl ReparamNoise {
    pub fn draw<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let uniform: Vec<f64> = (0..rows * cols).map(|_| Open01.sample(rng)).collect();
        let normal: Vec<f64> = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
        ReparamNoise {
            uniform: Tensor::from_rows(rows, cols, uniform).expect("shape"),
            normal: Tensor::from_rows(rows, cols, normal).expect("shape"),
        }
    }
}

fn logit(p: f64) -> f64 {
    p.ln() - (-p).ln_1p()
}

fn check_noise(noise: &Tensor) -> Result<()> {
    if let Some(bad) = noise.data().iter().find(|&&u| !(u > 0.0 && u < 1.0)) {
        return Err(NoradError::Domain(format!(
            "uniform noise must lie strictly inside (0, 1), got {bad}"
        )));
    }
    Ok(())
}

/// Binary-concrete relaxation `σ((logit η + logit u) / τ)`.
pub fn sample_relaxed_bernoulli(eta: &Tensor, temperature: f64, noise: &Tensor) -> Result<Tensor> {
    if !(temperature > 0.0) {
        return Err(NoradError::Domain(format!("temperature must be positive, got {temperature}")));
    }
    if eta.shape() != noise.shape() {
        return Err(NoradError::dim("relaxed bernoulli", eta.shape(), noise.shape()));
    }
    check_noise(noise)?;
    Ok(eta.zip_map(noise, |e, u| sigmoid((logit(e) + logit(u)) / temperature)))
}

/// `μ + σ ⊙ ε`.
pub fn sample_gaussian(mu: &Tensor, sigma: &Tensor, noise: &Tensor) -> Result<Tensor> {
    if mu.shape() != sigma.shape() || mu.shape() != noise.shape() {
        return Err(NoradError::dim("gaussian sample", mu.shape(), noise.shape()));
    }
    let mut v = mu.clone();
    for ((o, s), e) in v.data_mut().iter_mut().zip(sigma.data()).zip(noise.data()) {
        *o += s * e;
    }
    Ok(v)
}

/// `Σ η log(η/δ) + (1−η) log((1−η)/(1−δ))`, nats.
pub fn kl_bernoulli(eta: &Tensor, delta: f64) -> f64 {
    eta.data()
        .iter()
        .map(|&e| {
            let mut t = 0.0;
            if e > 0.0 {
                t += e * (e / delta).ln();
            }
            if e < 1.0 {
                t += (1.0 - e) * ((1.0 - e) / (1.0 - delta)).ln();
            }
            t
        })
        .sum()
}

/// `Σ log(s/σ) + (σ² + (μ−u)²) / 2s² − ½`, nats.
pub fn kl_gaussian(mu: &Tensor, sigma: &Tensor, u: f64, s: f64) -> f64 {
    mu.data()
        .iter()
        .zip(sigma.data())
        .map(|(&m, &sg)| (s / sg).ln() + (sg * sg + (m - u) * (m - u)) / (2.0 * s * s) - 0.5)
        .sum()
}

/// Exponential decay from `start` to `floor` over `total_steps`, clamped at
/// `floor`.
pub fn temperature_schedule(step: usize, total_steps: usize, start: f64, floor: f64) -> f64 {
    if total_steps == 0 || step >= total_steps {
        return floor;
    }
    let frac = step as f64 / total_steps as f64;
    (start * (floor / start).powf(frac)).max(floor)
}

/// Relaxed spike sample on the tape; differentiable in `eta`.
pub fn relaxed_bernoulli_on_tape(
    tape: &mut Tape,
    eta: Var,
    temperature: f64,
    noise: &Tensor,
) -> Result<Var> {
    check_noise(noise)?;
    let log_eta = tape.log(eta)?;
    let neg = tape.scale(eta, -1.0);
    let one_minus = tape.offset(neg, 1.0);
    let log_one_minus = tape.log(one_minus)?;
    let logit_eta = tape.sub(log_eta, log_one_minus)?;
    let noise_logit = tape.constant(noise.map(logit));
    let pre = tape.add(logit_eta, noise_logit)?;
    let scaled = tape.scale(pre, 1.0 / temperature);
    Ok(tape.sigmoid(scaled))
}

pub fn gaussian_on_tape(tape: &mut Tape, mu: Var, sigma: Var, noise: &Tensor) -> Result<Var> {
    let eps = tape.constant(noise.clone());
    let spread = tape.hadamard(sigma, eps)?;
    tape.add(mu, spread)
}

pub fn kl_bernoulli_on_tape(tape: &mut Tape, eta: Var, delta: f64) -> Result<Var> {
    let log_eta = tape.log(eta)?;
    let neg = tape.scale(eta, -1.0);
    let one_minus = tape.offset(neg, 1.0);
    let log_one_minus = tape.log(one_minus)?;
    let a = tape.offset(log_eta, -delta.ln());
    let b = tape.offset(log_one_minus, -(1.0 - delta).ln());
    let ta = tape.hadamard(eta, a)?;
    let tb = tape.hadamard(one_minus, b)?;
    let both = tape.add(ta, tb)?;
    Ok(tape.sum(both))
}

pub fn kl_gaussian_on_tape(tape: &mut Tape, mu: Var, sigma: Var, u: f64, s: f64) -> Result<Var> {
    let log_sigma = tape.log(sigma)?;
    let var = tape.hadamard(sigma, sigma)?;
    let centered = tape.offset(mu, -u);
    let sq = tape.hadamard(centered, centered)?;
    let num = tape.add(var, sq)?;
    let quad = tape.scale(num, 1.0 / (2.0 * s * s));
    let diff = tape.sub(quad, log_sigma)?;
    let per = tape.offset(diff, s.ln() - 0.5);
    Ok(tape.sum(per))
}
