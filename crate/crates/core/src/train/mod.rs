//! Three-term ℓ1 training objective (appearance, perceptual, latent), exact
//! reverse-mode gradients for every parameter, a central-difference gradient
//! checker and a plain gradient-descent loop.

mod gradcheck;
mod loss;
mod optim;

pub use gradcheck::{
    check_gradient, finite_diff_check, finite_diff_check_against, relative_error, CoordCheck,
    GradCheckReport, MIN_COORDINATES, MIN_POSITIONAL,
};
pub use loss::{backward, evaluate, loss, Backward};
pub use optim::{train, train_step, TrainLogRecord};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelConfig, ModelError, ModelParams};
use crate::Scalar;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("learning rate must be finite and >= 0, got {0}")]
    InvalidLR(f64),
    #[error("empty batch")]
    EmptyBatch,
    #[error("finite-difference step must be positive, got {0}")]
    InvalidStep(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Which latents the latent-space term compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LatentTarget {
    /// Every branch latent of the target against the same branch of the output.
    #[default]
    AllBranches,
    /// Only the fused latents.
    FusedOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct LossConfig {
    /// Explicit `[appearance, perceptual, latent]` weights. `None` uses the
    /// reciprocal element count of each compared tensor.
    pub weights: Option<[f64; 3]>,
    pub latent: LatentTarget,
}

impl LossConfig {
    pub fn with_weights(mut self, weights: [f64; 3]) -> Self {
        self.weights = Some(weights);
        self
    }

    pub fn lambdas(&self, cfg: &ModelConfig) -> [f64; 3] {
        if let Some(w) = self.weights {
            return w;
        }
        let pixels = (cfg.height * cfg.width) as f64;
        let latent_elems = (cfg.n_tokens() * cfg.token_dim()) as f64;
        let latent_copies = match self.latent {
            LatentTarget::AllBranches => 4.0,
            LatentTarget::FusedOnly => 1.0,
        };
        [
            1.0 / (pixels * 3.0),
            1.0 / (pixels * cfg.channels as f64),
            1.0 / (latent_copies * latent_elems),
        ]
    }
}

/// Raw ℓ1 sums of the three terms and the weights that combine them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct LossBreakdown {
    pub total: f64,
    pub appearance: f64,
    pub perceptual: f64,
    pub latent: f64,
    pub lambda: [f64; 3],
}

impl LossBreakdown {
    pub fn new(appearance: f64, perceptual: f64, latent: f64, lambda: [f64; 3]) -> Self {
        Self {
            total: lambda[0] * appearance + lambda[1] * perceptual + lambda[2] * latent,
            appearance,
            perceptual,
            latent,
            lambda,
        }
    }

    /// `[λ1·appearance, λ2·perceptual, λ3·latent]`.
    pub fn weighted(&self) -> [f64; 3] {
        [
            self.lambda[0] * self.appearance,
            self.lambda[1] * self.perceptual,
            self.lambda[2] * self.latent,
        ]
    }

    pub fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        let n = items.len().max(1) as f64;
        let mut out = LossBreakdown {
            lambda: items.first().map(|b| b.lambda).unwrap_or_default(),
            ..Default::default()
        };
        for b in items {
            out.total += b.total;
            out.appearance += b.appearance;
            out.perceptual += b.perceptual;
            out.latent += b.latent;
        }
        out.total /= n;
        out.appearance /= n;
        out.perceptual /= n;
        out.latent /= n;
        out
    }
}

/// Gradient of the total loss, shaped exactly like [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet<T> {
    pub grads: ModelParams<T>,
}

impl<T: Scalar> GradientSet<T> {
    pub fn zeros_like(params: &ModelParams<T>) -> Self {
        Self {
            grads: params.zeros_like(),
        }
    }

    pub fn d_alpha(&self) -> T {
        self.grads.fusion.alpha.data()[0]
    }

    pub fn d_beta(&self) -> T {
        self.grads.fusion.beta.data()[0]
    }

    pub fn d_gamma(&self) -> T {
        self.grads.fusion.gamma.data()[0]
    }

    pub fn add(&mut self, other: &GradientSet<T>) {
        self.grads.zip_mut(&other.grads, |a, b| {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += *y;
            }
        });
    }

    pub fn scale(&mut self, k: T) {
        self.grads.for_each_mut(|_, t| {
            for x in t.data_mut() {
                *x *= k;
            }
        });
    }

    pub fn max_abs(&self) -> T {
        self.grads
            .tensors()
            .iter()
            .flat_map(|(_, t)| t.data().iter().map(|v| v.abs()))
            .fold(T::zero(), T::max)
    }

    pub fn is_finite(&self) -> bool {
        self.grads.is_finite()
    }
}
