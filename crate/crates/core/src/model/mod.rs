//! The enhancement network: a convolutional feature head shared by four
//! input branches (raw, white-balanced, gamma-corrected, equalized), a
//! windowed self-attention encoder, a learned linear fusion of the four
//! branch latents and a convolutional decoder.

mod checkpoint;
pub(crate) mod layers;
mod network;
mod params;
mod tensor;
mod tokens;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC,
};
pub use layers::{attention_probabilities, Conv2d, EncoderLayer, LayerNorm, Linear, ResBlock};
pub use network::{
    decode, encode, extract_features, forward, fuse_latents, Branch, ForwardOutput, BRANCHES,
};
pub(crate) use network::{
    decode_backward, decode_cached, embed_cached, encode_backward, head_backward, DecoderCache,
    Embedding,
};
pub use params::{Decoder, Encoder, FeatureHead, Fusion, ModelParams};
pub use tensor::Tensor;
pub(crate) use tensor::{add_assign, dot};
pub(crate) use tokens::dewindowize_dims;
pub use tokens::{dewindowize, windowize, FeatureMap, TokenSequence};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{ImagingError, DEFAULT_GAMMA};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("window side {patch} does not divide {height}x{width}")]
    IndivisibleWindow {
        patch: usize,
        height: usize,
        width: usize,
    },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Static architecture description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub height: usize,
    pub width: usize,
    /// Window side `p`; windows are `p x p x channels` tokens.
    pub patch: usize,
    pub channels: usize,
    pub layers: usize,
    pub heads: usize,
    pub mlp_hidden: usize,
    pub seed: u64,
    /// Exponent used by the gamma-corrected branch.
    pub gamma: f64,
}

impl ModelConfig {
    /// Full-width configuration: 64 feature channels, 4 encoder layers of 4 heads.
    pub fn new(height: usize, width: usize) -> Self {
        Self::with_dims(height, width, 4, 64, 4, 4)
    }

    /// Small configuration used by tests and the desk-scale CLI defaults.
    pub fn tiny(height: usize, width: usize) -> Self {
        Self::with_dims(height, width, 4, 8, 1, 2)
    }

    pub fn with_dims(
        height: usize,
        width: usize,
        patch: usize,
        channels: usize,
        layers: usize,
        heads: usize,
    ) -> Self {
        let d = patch * patch * channels;
        Self {
            height,
            width,
            patch,
            channels,
            layers,
            heads,
            mlp_hidden: 2 * d,
            seed: 0,
            gamma: DEFAULT_GAMMA,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn n_tokens(&self) -> usize {
        (self.height / self.patch) * (self.width / self.patch)
    }

    pub fn token_dim(&self) -> usize {
        self.patch * self.patch * self.channels
    }

    pub fn head_dim(&self) -> usize {
        self.token_dim() / self.heads
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.height == 0 || self.width == 0 {
            return Err(ModelError::InvalidConfig(
                "image dims must be positive".into(),
            ));
        }
        if self.patch == 0
            || !self.height.is_multiple_of(self.patch)
            || !self.width.is_multiple_of(self.patch)
        {
            return Err(ModelError::IndivisibleWindow {
                patch: self.patch,
                height: self.height,
                width: self.width,
            });
        }
        if self.channels == 0 {
            return Err(ModelError::InvalidConfig("channels must be >= 1".into()));
        }
        if self.heads == 0 || !self.token_dim().is_multiple_of(self.heads) {
            return Err(ModelError::InvalidConfig(format!(
                "token dim {} not divisible by {} heads",
                self.token_dim(),
                self.heads
            )));
        }
        if self.mlp_hidden == 0 {
            return Err(ModelError::InvalidConfig("mlp_hidden must be >= 1".into()));
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(ModelError::InvalidConfig(format!("gamma {}", self.gamma)));
        }
        Ok(())
    }

    /// Checks that an input image matches the configured size.
    pub fn check_image(&self, height: usize, width: usize) -> Result<(), ModelError> {
        if self.patch == 0
            || !height.is_multiple_of(self.patch)
            || !width.is_multiple_of(self.patch)
        {
            return Err(ModelError::IndivisibleWindow {
                patch: self.patch,
                height,
                width,
            });
        }
        if (height, width) != (self.height, self.width) {
            return Err(ModelError::ShapeMismatch(format!(
                "image {height}x{width}, model expects {}x{}",
                self.height, self.width
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(ModelConfig::tiny(16, 16).validate().is_ok());
        assert!(matches!(
            ModelConfig::tiny(18, 16).validate(),
            Err(ModelError::IndivisibleWindow { .. })
        ));
        let mut cfg = ModelConfig::tiny(16, 16);
        cfg.heads = 3;
        assert!(matches!(cfg.validate(), Err(ModelError::InvalidConfig(_))));
        let full = ModelConfig::new(64, 64);
        assert_eq!(full.channels, 64);
        assert_eq!(full.mlp_hidden, 2 * full.token_dim());
    }

    #[test]
    fn token_counts() {
        let cfg = ModelConfig::with_dims(64, 64, 8, 4, 1, 1);
        assert_eq!(cfg.n_tokens(), 64);
        assert_eq!(cfg.token_dim(), 256);
    }
}
