use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::layers::{Conv2d, EncoderLayer, LayerNorm, ResBlock};
use super::tensor::Tensor;
use super::{ModelConfig, ModelError};
use crate::Scalar;

const POS_ENCODING_STD: f64 = 0.02;

/// Convolution stem followed by two residual blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureHead<T> {
    pub stem: Conv2d<T>,
    pub blocks: [ResBlock<T>; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder<T> {
    /// Learned positional encoding, `n x d`.
    pub pos: Tensor<T>,
    pub layers: Vec<EncoderLayer<T>>,
}

/// Weights of the auxiliary branches in `U + a*U_wb + b*U_gc + g*U_he`.
#[derive(Debug, Clone, PartialEq)]
pub struct Fusion<T> {
    pub alpha: Tensor<T>,
    pub beta: Tensor<T>,
    pub gamma: Tensor<T>,
}

impl<T: Scalar> Fusion<T> {
    pub fn new(alpha: T, beta: T, gamma: T) -> Self {
        Self {
            alpha: Tensor::scalar(alpha),
            beta: Tensor::scalar(beta),
            gamma: Tensor::scalar(gamma),
        }
    }

    /// `[1, alpha, beta, gamma]`, the weight of each branch in branch order.
    pub fn weights(&self) -> [T; 4] {
        [
            T::one(),
            self.alpha.value(),
            self.beta.value(),
            self.gamma.value(),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoder<T> {
    pub stem: Conv2d<T>,
    pub blocks: [ResBlock<T>; 2],
    pub out: Conv2d<T>,
}

/// Every learnable tensor of the enhancement network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub head: FeatureHead<T>,
    pub encoder: Encoder<T>,
    pub fusion: Fusion<T>,
    pub decoder: Decoder<T>,
}

fn conv_visit<'a, T>(c: &'a Conv2d<T>, p: &str, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
    f(format!("{p}.weight"), &c.weight);
    f(format!("{p}.bias"), &c.bias);
}

fn conv_visit_mut<'a, T>(
    c: &'a mut Conv2d<T>,
    p: &str,
    f: &mut dyn FnMut(String, &'a mut Tensor<T>),
) {
    f(format!("{p}.weight"), &mut c.weight);
    f(format!("{p}.bias"), &mut c.bias);
}

fn blocks_visit<'a, T>(b: &'a [ResBlock<T>; 2], p: &str, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
    for (i, blk) in b.iter().enumerate() {
        conv_visit(&blk.conv1, &format!("{p}.block{i}.conv1"), f);
        conv_visit(&blk.conv2, &format!("{p}.block{i}.conv2"), f);
    }
}

fn blocks_visit_mut<'a, T>(
    b: &'a mut [ResBlock<T>; 2],
    p: &str,
    f: &mut dyn FnMut(String, &'a mut Tensor<T>),
) {
    for (i, blk) in b.iter_mut().enumerate() {
        conv_visit_mut(&mut blk.conv1, &format!("{p}.block{i}.conv1"), f);
        conv_visit_mut(&mut blk.conv2, &format!("{p}.block{i}.conv2"), f);
    }
}

impl<T: Scalar> ModelParams<T> {
    /// All-zero parameters shaped for `cfg` (layer-norm gains included).
    pub fn zeros(cfg: &ModelConfig) -> Result<Self, ModelError> {
        cfg.validate()?;
        let (c, n, d) = (cfg.channels, cfg.n_tokens(), cfg.token_dim());
        Ok(Self {
            head: FeatureHead {
                stem: Conv2d::zeros(3, c),
                blocks: [ResBlock::zeros(c), ResBlock::zeros(c)],
            },
            encoder: Encoder {
                pos: Tensor::zeros(&[n, d]),
                layers: (0..cfg.layers)
                    .map(|_| EncoderLayer::zeros(d, cfg.mlp_hidden))
                    .collect(),
            },
            fusion: Fusion::new(T::zero(), T::zero(), T::zero()),
            decoder: Decoder {
                stem: Conv2d::zeros(c, c),
                blocks: [ResBlock::zeros(c), ResBlock::zeros(c)],
                out: Conv2d::zeros(c, 3),
            },
        })
    }

    /// Seeded initialization: He-uniform weights, zero biases, unit layer-norm
    /// gains, `N(0, 0.02)` positional encoding, fusion weights 1/3
    /// and a mid-gray (0.5) output bias.
    pub fn init(cfg: &ModelConfig) -> Result<Self, ModelError> {
        let mut params = Self::zeros(cfg)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let normal = Normal::new(0.0, POS_ENCODING_STD).expect("valid std");
        params.for_each_mut(|name, t| {
            if name.ends_with(".bias") {
                return;
            }
            if name.ends_with(".gain") {
                t.fill(T::one());
                return;
            }
            if name == "encoder.pos" {
                for v in t.data_mut() {
                    *v = T::of(normal.sample(&mut rng));
                }
                return;
            }
            if name.starts_with("fusion.") {
                t.fill(T::of(1.0 / 3.0));
                return;
            }
            let shape = t.shape();
            let fan_in: usize = shape[..shape.len() - 1].iter().product();
            let bound = (6.0 / fan_in as f64).sqrt();
            for v in t.data_mut() {
                *v = T::of(rng.random_range(-bound..bound));
            }
        });
        params.decoder.out.bias.fill(T::of(0.5));
        Ok(params)
    }

    pub fn visit<'a>(&'a self, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
        conv_visit(&self.head.stem, "head.stem", f);
        blocks_visit(&self.head.blocks, "head", f);
        f("encoder.pos".into(), &self.encoder.pos);
        for (i, l) in self.encoder.layers.iter().enumerate() {
            let p = format!("encoder.layer{i}");
            f(format!("{p}.ln1.gain"), &l.ln1.gain);
            f(format!("{p}.ln1.bias"), &l.ln1.bias);
            f(format!("{p}.wq"), &l.wq);
            f(format!("{p}.wk"), &l.wk);
            f(format!("{p}.wv"), &l.wv);
            f(format!("{p}.wo"), &l.wo);
            f(format!("{p}.ln2.gain"), &l.ln2.gain);
            f(format!("{p}.ln2.bias"), &l.ln2.bias);
            f(format!("{p}.fc1.weight"), &l.fc1.weight);
            f(format!("{p}.fc1.bias"), &l.fc1.bias);
            f(format!("{p}.fc2.weight"), &l.fc2.weight);
            f(format!("{p}.fc2.bias"), &l.fc2.bias);
        }
        f("fusion.alpha".into(), &self.fusion.alpha);
        f("fusion.beta".into(), &self.fusion.beta);
        f("fusion.gamma".into(), &self.fusion.gamma);
        conv_visit(&self.decoder.stem, "decoder.stem", f);
        blocks_visit(&self.decoder.blocks, "decoder", f);
        conv_visit(&self.decoder.out, "decoder.out", f);
    }

    pub fn for_each_mut(&mut self, mut f: impl FnMut(&str, &mut Tensor<T>)) {
        for (name, t) in self.tensors_mut() {
            f(&name, t);
        }
    }

    /// Mutable named tensors in canonical order.
    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        self.visit_mut(&mut |name, t| out.push((name, t)));
        out
    }

    fn visit_mut<'a>(&'a mut self, f: &mut dyn FnMut(String, &'a mut Tensor<T>)) {
        conv_visit_mut(&mut self.head.stem, "head.stem", f);
        blocks_visit_mut(&mut self.head.blocks, "head", f);
        f("encoder.pos".into(), &mut self.encoder.pos);
        for (i, l) in self.encoder.layers.iter_mut().enumerate() {
            let p = format!("encoder.layer{i}");
            f(format!("{p}.ln1.gain"), &mut l.ln1.gain);
            f(format!("{p}.ln1.bias"), &mut l.ln1.bias);
            f(format!("{p}.wq"), &mut l.wq);
            f(format!("{p}.wk"), &mut l.wk);
            f(format!("{p}.wv"), &mut l.wv);
            f(format!("{p}.wo"), &mut l.wo);
            f(format!("{p}.ln2.gain"), &mut l.ln2.gain);
            f(format!("{p}.ln2.bias"), &mut l.ln2.bias);
            f(format!("{p}.fc1.weight"), &mut l.fc1.weight);
            f(format!("{p}.fc1.bias"), &mut l.fc1.bias);
            f(format!("{p}.fc2.weight"), &mut l.fc2.weight);
            f(format!("{p}.fc2.bias"), &mut l.fc2.bias);
        }
        f("fusion.alpha".into(), &mut self.fusion.alpha);
        f("fusion.beta".into(), &mut self.fusion.beta);
        f("fusion.gamma".into(), &mut self.fusion.gamma);
        conv_visit_mut(&mut self.decoder.stem, "decoder.stem", f);
        blocks_visit_mut(&mut self.decoder.blocks, "decoder", f);
        conv_visit_mut(&mut self.decoder.out, "decoder.out", f);
    }

    /// Named tensors in canonical (checkpoint) order.
    pub fn tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        self.visit(&mut |name, t| out.push((name, t)));
        out
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors()
            .into_iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors_mut()
            .into_iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    /// Applies `f(self_tensor, other_tensor)` pairwise in canonical order.
    pub fn zip_mut(&mut self, other: &Self, mut f: impl FnMut(&mut Tensor<T>, &Tensor<T>)) {
        let others = other.tensors();
        let mut i = 0;
        self.for_each_mut(|name, t| {
            debug_assert_eq!(name, others[i].0);
            f(t, others[i].1);
            i += 1;
        });
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.for_each_mut(|_, t| t.fill(T::zero()));
        z
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, t)| t.data().iter().all(|v| v.is_finite()))
    }

    /// Shape check against a configuration.
    pub fn check_config(&self, cfg: &ModelConfig) -> Result<(), ModelError> {
        let reference = Self::zeros(cfg)?;
        let mine = self.tensors();
        let theirs = reference.tensors();
        if mine.len() != theirs.len() {
            return Err(ModelError::ShapeMismatch(format!(
                "{} tensors, config implies {}",
                mine.len(),
                theirs.len()
            )));
        }
        for ((na, a), (nb, b)) in mine.iter().zip(&theirs) {
            if na != nb || a.shape() != b.shape() {
                return Err(ModelError::ShapeMismatch(format!(
                    "{na} {:?} vs expected {nb} {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        let mut out = ModelParams::<U> {
            head: FeatureHead {
                stem: Conv2d::zeros(0, 0),
                blocks: [ResBlock::zeros(0), ResBlock::zeros(0)],
            },
            encoder: Encoder {
                pos: Tensor::zeros(&[0]),
                layers: (0..self.encoder.layers.len())
                    .map(|_| EncoderLayer::zeros(0, 0))
                    .collect(),
            },
            fusion: Fusion::new(U::zero(), U::zero(), U::zero()),
            decoder: Decoder {
                stem: Conv2d::zeros(0, 0),
                blocks: [ResBlock::zeros(0), ResBlock::zeros(0)],
                out: Conv2d::zeros(0, 0),
            },
        };
        let src = self.tensors();
        let mut i = 0;
        out.for_each_mut(|_, t| {
            let (_, s) = &src[i];
            *t = Tensor::from_vec(
                s.shape(),
                s.data().iter().map(|v| U::of(v.as_f64())).collect(),
            )
            .expect("same shape");
            i += 1;
        });
        out
    }
}

impl<T: Scalar> ModelParams<T> {
    /// Sets every layer-norm to the identity affine map (unit gain, zero bias).
    pub fn with_identity_norms(mut self) -> Self {
        for l in &mut self.encoder.layers {
            let d = l.ln1.gain.len();
            l.ln1 = LayerNorm::identity(d);
            l.ln2 = LayerNorm::identity(d);
        }
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_seeded_and_shaped() {
        let cfg = ModelConfig::tiny(16, 16).with_seed(7);
        let a = ModelParams::<f64>::init(&cfg).unwrap();
        let b = ModelParams::<f64>::init(&cfg).unwrap();
        assert_eq!(a, b);
        a.check_config(&cfg).unwrap();
        assert_eq!(a.fusion.weights(), [1.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]);
        let c = ModelParams::<f64>::init(&cfg.clone().with_seed(8)).unwrap();
        assert_ne!(a, c);
        let pos = a.encoder.pos.data();
        let std = (pos.iter().map(|v| v * v).sum::<f64>() / pos.len() as f64).sqrt();
        assert!((std - 0.02).abs() < 0.005, "pos std {std}");
    }

    #[test]
    fn canonical_names_are_unique() {
        let cfg = ModelConfig::tiny(8, 8);
        let p = ModelParams::<f32>::zeros(&cfg).unwrap();
        let names: Vec<String> = p.tensors().into_iter().map(|(n, _)| n).collect();
        let mut dedup = names.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), names.len());
        assert_eq!(names[0], "head.stem.weight");
        assert!(p.tensor("fusion.beta").is_some());
    }

    #[test]
    fn tensor_mut_and_cast() {
        let cfg = ModelConfig::tiny(8, 8);
        let mut p = ModelParams::<f64>::init(&cfg).unwrap();
        p.tensor_mut("fusion.alpha").unwrap().fill(0.25);
        assert_eq!(p.fusion.alpha.data(), &[0.25]);
        let q: ModelParams<f32> = p.cast();
        assert_eq!(q.fusion.alpha.data(), &[0.25f32]);
        q.check_config(&cfg).unwrap();
    }
}
