//! Sparse variational dropout on filter weights, plus the fixed Bernoulli
//! and Gaussian dropout variants used for ablations.
//!
//! Each weight w_ij carries a mean `theta_ij` and a log-variance
//! `log_sigma2_ij`; training draws w = theta + sigma * eps (the additive
//! reparameterization of multiplicative N(1, alpha) noise), and the
//! KL regularizer drives irrelevant weights toward large
//! `log_alpha = log_sigma2 - log(theta^2)`, where they can be pruned to
//! exactly zero at inference.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::autodiff::{Tensor, TensorError};
use crate::fmath;
use crate::rng::Rng;

/// Constants of the sigmoid-polynomial approximation to the negative KL.
pub const KL_K1: f64 = 0.63576;
pub const KL_K2: f64 = 1.87320;
pub const KL_K3: f64 = 1.48695;

/// Stabilizer inside log(theta^2 + eps) when deriving log-alpha.
pub const THETA_EPS: f64 = 1e-8;

/// log-alpha is clipped to [-CLIP, CLIP] before use in the KL and the
/// prune rule.
pub const LOG_ALPHA_CLIP: f64 = 10.0;

/// Weights with log-alpha above this are pruned at inference
/// (keep-probability below about 5%).
pub const PRUNE_THRESHOLD: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VdError {
    InvalidArgument(String),
}

impl fmt::Display for VdError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VdError::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
        }
    }
}

impl core::error::Error for VdError {}

/// Per-weight mean and log-variance state wrapping one weight matrix.
#[derive(Debug, Clone)]
pub struct VdLayer {
    pub theta: Tensor,
    pub log_sigma2: Tensor,
}

impl VdLayer {
    /// Wrap initial weight means; every weight starts at the given
    /// log-alpha (default -8 keeps initial noise negligible).
    pub fn new(shape: &[usize], theta: Vec<f64>, init_log_alpha: f64) -> Result<Self, TensorError> {
        let log_sigma2: Vec<f64> = theta
            .iter()
            .map(|&t| init_log_alpha + fmath::ln(t * t + THETA_EPS))
            .collect();
        Ok(Self {
            theta: Tensor::leaf(shape, theta, true)?,
            log_sigma2: Tensor::leaf(shape, log_sigma2, true)?,
        })
    }

    pub fn from_tensors(theta: Tensor, log_sigma2: Tensor) -> Result<Self, VdError> {
        if theta.shape() != log_sigma2.shape() {
            return Err(VdError::InvalidArgument(format!(
                "theta shape {:?} does not match log_sigma2 shape {:?}",
                theta.shape(),
                log_sigma2.shape()
            )));
        }
        Ok(Self { theta, log_sigma2 })
    }

    pub fn shape(&self) -> &[usize] {
        self.theta.shape()
    }

    /// Differentiable log-alpha: clamp(log_sigma2 - log(theta^2 + eps)).
    pub fn log_alpha_graph(&self) -> Result<Tensor, TensorError> {
        Ok(self
            .log_sigma2
            .sub(&self.theta.square().add_scalar(THETA_EPS).log())?
            .clamp(-LOG_ALPHA_CLIP, LOG_ALPHA_CLIP))
    }

    /// Current log-alpha values.
    pub fn log_alpha(&self) -> Vec<f64> {
        let theta = self.theta.value();
        self.log_sigma2
            .value()
            .iter()
            .zip(theta.iter())
            .map(|(&ls2, &t)| {
                (ls2 - fmath::ln(t * t + THETA_EPS)).clamp(-LOG_ALPHA_CLIP, LOG_ALPHA_CLIP)
            })
            .collect()
    }

    /// Training-mode effective weights as a graph node:
    /// w = theta + exp(0.5 * log_sigma2) * eps, eps ~ N(0, 1) from `rng`.
    /// Gradients reach both theta and log_sigma2.
    pub fn noisy_weights_graph(&self, rng: &mut Rng) -> Result<Tensor, TensorError> {
        let eps: Vec<f64> = (0..self.theta.numel())
            .map(|_| crate::rng::normal(rng))
            .collect();
        let eps = Tensor::constant(self.shape(), eps)?;
        let sigma = self.log_sigma2.mul_scalar(0.5).exp();
        self.theta.add(&sigma.mul(&eps)?)
    }

    /// Inference-mode weights: theta with entries where
    /// log_alpha > threshold replaced by exactly 0.
    pub fn pruned_weights(&self, threshold: f64) -> Vec<f64> {
        let mask = self.prune_mask(threshold);
        self.theta
            .value()
            .iter()
            .zip(mask.iter())
            .map(|(&t, &keep)| if keep { t } else { 0.0 })
            .collect()
    }

    /// Binary keep-mask: false (drop) iff log_alpha > threshold.
    pub fn prune_mask(&self, threshold: f64) -> Vec<bool> {
        self.log_alpha().iter().map(|&la| la <= threshold).collect()
    }

    /// Fraction of weights dropped at the given threshold.
    pub fn sparsity(&self, threshold: f64) -> f64 {
        let mask = self.prune_mask(threshold);
        let dropped = mask.iter().filter(|&&keep| !keep).count();
        dropped as f64 / mask.len() as f64
    }

    /// KL regularizer (to be added to the loss) as a scalar graph node:
    /// sum of -(k1 * sigmoid(k2 + k3 * la) - 0.5 * log(1 + exp(-la)) - k1),
    /// nonincreasing in each log-alpha with minimum 0 as la -> +inf.
    ///
    /// Here log-alpha is clipped from above only: the formula is numerically
    /// safe for arbitrarily negative values, and a hard lower clip would
    /// zero the gradient exactly where the KL must push dormant weights
    /// back toward pruning.
    pub fn kl_graph(&self) -> Result<Tensor, TensorError> {
        let la = self
            .log_sigma2
            .sub(&self.theta.square().add_scalar(THETA_EPS).log())?
            .clamp(f64::NEG_INFINITY, LOG_ALPHA_CLIP);
        let gate = la.mul_scalar(KL_K3).add_scalar(KL_K2).sigmoid().mul_scalar(-KL_K1);
        let tail = la.neg().softplus().mul_scalar(0.5);
        Ok(gate.add(&tail)?.add_scalar(KL_K1).sum_all())
    }

    /// Current KL value (same clipping convention as [`Self::kl_graph`]).
    pub fn kl(&self) -> f64 {
        let theta = self.theta.value();
        self.log_sigma2
            .value()
            .iter()
            .zip(theta.iter())
            .map(|(&ls2, &t)| {
                kl_term((ls2 - fmath::ln(t * t + THETA_EPS)).min(LOG_ALPHA_CLIP))
            })
            .sum()
    }
}

/// Per-weight KL term of the approximation, as a plain function of
/// log-alpha (clipping is the caller's concern).
pub fn kl_term(log_alpha: f64) -> f64 {
    let sig = 1.0 / (1.0 + fmath::exp(-(KL_K2 + KL_K3 * log_alpha)));
    let softplus_neg = {
        let x = -log_alpha;
        let m = if x > 0.0 { x } else { 0.0 };
        m + fmath::ln_1p(fmath::exp(-x.abs()))
    };
    -(KL_K1 * sig - 0.5 * softplus_neg - KL_K1)
}

/// Spec-style forward: training draws noisy weights, inference prunes at
/// [`PRUNE_THRESHOLD`].
pub fn vd_forward(layer: &VdLayer, training: bool, rng: &mut Rng) -> Result<Vec<f64>, TensorError> {
    if training {
        Ok(layer.noisy_weights_graph(rng)?.data())
    } else {
        Ok(layer.pruned_weights(PRUNE_THRESHOLD))
    }
}

/// Multiplicative Bernoulli dropout noise with inverted scaling: each factor
/// is 0 with probability p, otherwise 1/(1-p). Identity when not training.
pub fn bernoulli_noise(
    numel: usize,
    p: f64,
    training: bool,
    rng: &mut Rng,
) -> Result<Vec<f64>, VdError> {
    if !(0.0..1.0).contains(&p) {
        return Err(VdError::InvalidArgument(format!(
            "dropout probability must be in [0, 1), got {p}"
        )));
    }
    if !training || p == 0.0 {
        return Ok(alloc::vec![1.0; numel]);
    }
    let keep = 1.0 - p;
    Ok((0..numel)
        .map(|_| {
            if crate::rng::uniform(rng) < keep {
                1.0 / keep
            } else {
                0.0
            }
        })
        .collect())
}

/// Multiplicative Gaussian dropout noise xi ~ N(1, alpha). Identity when not
/// training.
pub fn gaussian_noise(
    numel: usize,
    alpha: f64,
    training: bool,
    rng: &mut Rng,
) -> Result<Vec<f64>, VdError> {
    if alpha < 0.0 {
        return Err(VdError::InvalidArgument(format!(
            "gaussian dropout variance must be non-negative, got {alpha}"
        )));
    }
    if !training || alpha == 0.0 {
        return Ok(alloc::vec![1.0; numel]);
    }
    let sigma = fmath::sqrt(alpha);
    Ok((0..numel)
        .map(|_| 1.0 + sigma * crate::rng::normal(rng))
        .collect())
}

/// Bernoulli dropout applied to a weight matrix.
pub fn bernoulli_dropout(
    weights: &[f64],
    p: f64,
    training: bool,
    rng: &mut Rng,
) -> Result<Vec<f64>, VdError> {
    let noise = bernoulli_noise(weights.len(), p, training, rng)?;
    Ok(weights.iter().zip(noise).map(|(w, n)| w * n).collect())
}

/// Gaussian dropout applied to a weight matrix.
pub fn gaussian_dropout(
    weights: &[f64],
    alpha: f64,
    training: bool,
    rng: &mut Rng,
) -> Result<Vec<f64>, VdError> {
    let noise = gaussian_noise(weights.len(), alpha, training, rng)?;
    Ok(weights.iter().zip(noise).map(|(w, n)| w * n).collect())
}
