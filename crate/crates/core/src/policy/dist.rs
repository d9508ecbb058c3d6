//! Diagonal Gaussian over pre-squash actions, squashed through a sigmoid
//! into normalized rotor commands.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::nn::{sigmoid, softplus};
use super::ACTION_DIM;
use crate::dynamics::ControlInput;

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 1.0;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionDistribution {
    pub mean: [f64; ACTION_DIM],
    /// Already clamped to [`LOG_STD_MIN`, `LOG_STD_MAX`].
    pub log_std: [f64; ACTION_DIM],
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampledAction {
    pub u: ControlInput,
    /// Pre-squash sample, kept so the log-density can be re-evaluated
    /// exactly under new parameters.
    pub z: [f64; ACTION_DIM],
    pub log_prob: f64,
}

impl ActionDistribution {
    pub fn new(mean: [f64; ACTION_DIM], raw_log_std: [f64; ACTION_DIM]) -> Self {
        ActionDistribution {
            mean,
            log_std: raw_log_std.map(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX)),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> SampledAction {
        let mut z = [0.0; ACTION_DIM];
        for i in 0..ACTION_DIM {
            let eps: f64 = StandardNormal.sample(rng);
            z[i] = self.mean[i] + self.log_std[i].exp() * eps;
        }
        SampledAction {
            u: squash(&z),
            z,
            log_prob: self.log_prob(&z),
        }
    }

    /// Mean action, used for evaluation rollouts.
    pub fn mode(&self) -> SampledAction {
        SampledAction {
            u: squash(&self.mean),
            z: self.mean,
            log_prob: self.log_prob(&self.mean),
        }
    }

    /// Log-density of the pre-squash sample.
    pub fn gaussian_log_prob(&self, z: &[f64; ACTION_DIM]) -> f64 {
        (0..ACTION_DIM)
            .map(|i| {
                let k = (z[i] - self.mean[i]) * (-self.log_std[i]).exp();
                -0.5 * k * k - self.log_std[i] - HALF_LN_2PI
            })
            .sum()
    }

    /// Log-density of the squashed action u = sigmoid(z), including the
    /// change-of-variables term −Σ log σ'(z).
    pub fn log_prob(&self, z: &[f64; ACTION_DIM]) -> f64 {
        self.gaussian_log_prob(z) + z.iter().map(|&zi| log_sigmoid_jacobian_inv(zi)).sum::<f64>()
    }

    /// Marginal log-density of component `i` at squashed value `u ∈ (0, 1)`.
    pub fn component_log_density(&self, i: usize, u: f64) -> f64 {
        let z = (u / (1.0 - u)).ln();
        let k = (z - self.mean[i]) * (-self.log_std[i]).exp();
        -0.5 * k * k - self.log_std[i] - HALF_LN_2PI + log_sigmoid_jacobian_inv(z)
    }

    /// Entropy of the pre-squash Gaussian.
    pub fn entropy(&self) -> f64 {
        self.log_std.iter().map(|l| l + 0.5 + HALF_LN_2PI).sum()
    }

    /// Gradient of [`Self::gaussian_log_prob`] with respect to the mean and
    /// the (clamped) log-std.
    pub fn log_prob_grad(&self, z: &[f64; ACTION_DIM]) -> ([f64; ACTION_DIM], [f64; ACTION_DIM]) {
        let mut dm = [0.0; ACTION_DIM];
        let mut ds = [0.0; ACTION_DIM];
        for i in 0..ACTION_DIM {
            let inv = (-self.log_std[i]).exp();
            let k = (z[i] - self.mean[i]) * inv;
            dm[i] = k * inv;
            ds[i] = k * k - 1.0;
        }
        (dm, ds)
    }
}

pub fn squash(z: &[f64; ACTION_DIM]) -> ControlInput {
    ControlInput::new(z.map(sigmoid))
}

// −log σ'(z) = softplus(z) + softplus(−z)
fn log_sigmoid_jacobian_inv(z: f64) -> f64 {
    softplus(z) + softplus(-z)
}
