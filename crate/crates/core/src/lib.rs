//! Underwater image enhancement (a windowed-transformer restorer with classical
//! pre-enhancement branches) and the one-pass evaluation toolkit for
//! single-object tracking on underwater video.
//!
//! The image and network code is generic over [`Scalar`] (`f32` or `f64`);
//! the aliases below pin the common instantiations.

pub mod dataset;
pub mod imaging;
pub mod model;
pub mod scalar;
pub mod tracking;
pub mod train;

pub use scalar::Scalar;

pub use dataset::{AttributeSet, SequenceRecord, Split, VoteTable};
pub use imaging::{Image, Psnr};
pub use model::{FeatureMap, ModelConfig, ModelParams, TokenSequence};
pub use tracking::{BoundingBox, EvalCurve};
pub use train::{GradientSet, LossBreakdown, LossConfig};

pub type Image32 = Image<f32>;
pub type Image64 = Image<f64>;
pub type Params32 = ModelParams<f32>;
pub type Params64 = ModelParams<f64>;
pub type Gradients32 = GradientSet<f32>;
pub type Gradients64 = GradientSet<f64>;
/// Boxes are always handled in `f64` pixel coordinates by the evaluator.
pub type BBox = BoundingBox<f64>;
