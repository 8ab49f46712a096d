use super::{ModelConfig, ModelError};
use crate::Scalar;

/// `height x width x channels` activations, channel-fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T> {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> FeatureMap<T> {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<T>,
    ) -> Result<Self, ModelError> {
        if data.len() != height * width * channels {
            return Err(ModelError::ShapeMismatch(format!(
                "feature buffer {} for {height}x{width}x{channels}",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![T::zero(); height * width * channels],
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn get(&self, y: usize, x: usize, ch: usize) -> T {
        self.data[(y * self.width + x) * self.channels + ch]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// `n x d` token matrix, one row per window.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence<T> {
    pub n: usize,
    pub d: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> TokenSequence<T> {
    pub fn new(n: usize, d: usize, data: Vec<T>) -> Result<Self, ModelError> {
        if data.len() != n * d {
            return Err(ModelError::ShapeMismatch(format!(
                "token buffer {} for {n}x{d}",
                data.len()
            )));
        }
        Ok(Self { n, d, data })
    }

    pub fn zeros(n: usize, d: usize) -> Self {
        Self {
            n,
            d,
            data: vec![T::zero(); n * d],
        }
    }

    pub fn token(&self, i: usize) -> &[T] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn same_shape(&self, other: &Self) -> Result<(), ModelError> {
        if (self.n, self.d) != (other.n, other.d) {
            return Err(ModelError::ShapeMismatch(format!(
                "tokens {}x{} vs {}x{}",
                self.n, self.d, other.n, other.d
            )));
        }
        Ok(())
    }
}

/// Source offset in the feature buffer of each token element, in token order.
fn window_index(
    height: usize,
    width: usize,
    channels: usize,
    patch: usize,
) -> impl Iterator<Item = usize> {
    let tiles_y = height / patch;
    let tiles_x = width / patch;
    (0..tiles_y).flat_map(move |ty| {
        (0..tiles_x).flat_map(move |tx| {
            (0..patch).flat_map(move |py| {
                let y = ty * patch + py;
                (0..patch).flat_map(move |px| {
                    let x = tx * patch + px;
                    let base = (y * width + x) * channels;
                    base..base + channels
                })
            })
        })
    })
}

/// Cuts a feature map into non-overlapping `p x p` windows, tiles in
/// row-major order, each flattened row-major (`(py * p + px) * c + ch`).
pub fn windowize<T: Scalar>(
    features: &FeatureMap<T>,
    patch: usize,
) -> Result<TokenSequence<T>, ModelError> {
    let (h, w, c) = features.shape();
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(ModelError::IndivisibleWindow {
            patch,
            height: h,
            width: w,
        });
    }
    let data = window_index(h, w, c, patch)
        .map(|i| features.data[i])
        .collect();
    Ok(TokenSequence {
        n: (h / patch) * (w / patch),
        d: patch * patch * c,
        data,
    })
}

/// Inverse of [`windowize`] for the geometry in `cfg`.
pub fn dewindowize<T: Scalar>(
    tokens: &TokenSequence<T>,
    cfg: &ModelConfig,
) -> Result<FeatureMap<T>, ModelError> {
    dewindowize_dims(tokens, cfg.height, cfg.width, cfg.channels, cfg.patch)
}

pub(crate) fn dewindowize_dims<T: Scalar>(
    tokens: &TokenSequence<T>,
    height: usize,
    width: usize,
    channels: usize,
    patch: usize,
) -> Result<FeatureMap<T>, ModelError> {
    if patch == 0 || !height.is_multiple_of(patch) || !width.is_multiple_of(patch) {
        return Err(ModelError::IndivisibleWindow {
            patch,
            height,
            width,
        });
    }
    let n = (height / patch) * (width / patch);
    let d = patch * patch * channels;
    if (tokens.n, tokens.d) != (n, d) {
        return Err(ModelError::ShapeMismatch(format!(
            "tokens {}x{} do not tile {height}x{width}x{channels} with p={patch}",
            tokens.n, tokens.d
        )));
    }
    let mut data = vec![T::zero(); height * width * channels];
    for (src, dst) in window_index(height, width, channels, patch).enumerate() {
        data[dst] = tokens.data[src];
    }
    Ok(FeatureMap {
        height,
        width,
        channels,
        data,
    })
}
