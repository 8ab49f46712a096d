//! RGB image container and the classical pre-enhancement operators
//! (gray-world white balance, gamma correction, histogram equalization).

mod codec;

pub use codec::{load_image, read_raw, save_image, write_raw, RAW_MAGIC};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Scalar;

/// Channel means below this are treated as empty by [`white_balance`].
pub const ZERO_CHANNEL_EPS: f64 = 1e-6;

/// Default exponent of the gamma-corrected branch (< 1 brightens).
pub const DEFAULT_GAMMA: f64 = 0.7;

const HE_LEVELS: usize = 256;

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("image dimensions must be positive, got {height}x{width}")]
    EmptyImage { height: usize, width: usize },
    #[error("buffer holds {actual} values, expected {expected} for {height}x{width}x3")]
    BufferLength {
        height: usize,
        width: usize,
        expected: usize,
        actual: usize,
    },
    #[error("pixel value {value} at index {index} is outside [0, 1]")]
    OutOfRange { index: usize, value: f64 },
    #[error("gamma must be positive and finite, got {0}")]
    InvalidGamma(f64),
    #[error("shape mismatch: {a_h}x{a_w} vs {b_h}x{b_w}")]
    ShapeMismatch {
        a_h: usize,
        a_w: usize,
        b_h: usize,
        b_w: usize,
    },
    #[error("codec error: {0}")]
    Codec(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Row-major `height x width x 3` image with values in `[0, 1]`.
///
/// Channels are interleaved: the value of channel `ch` at `(y, x)` lives at
/// `(y * width + x) * 3 + ch`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Scalar> Image<T> {
    pub fn new(height: usize, width: usize, data: Vec<T>) -> Result<Self, ImagingError> {
        if height == 0 || width == 0 {
            return Err(ImagingError::EmptyImage { height, width });
        }
        let expected = height * width * 3;
        if data.len() != expected {
            return Err(ImagingError::BufferLength {
                height,
                width,
                expected,
                actual: data.len(),
            });
        }
        if let Some((index, v)) = data
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v >= T::zero() && **v <= T::one()))
        {
            return Err(ImagingError::OutOfRange {
                index,
                value: v.as_f64(),
            });
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Builds an image by clamping every value into `[0, 1]`. NaN becomes 0.
    pub fn from_clamped(
        height: usize,
        width: usize,
        mut data: Vec<T>,
    ) -> Result<Self, ImagingError> {
        for v in data.iter_mut() {
            *v = clamp_unit(*v);
        }
        Self::new(height, width, data)
    }

    pub fn filled(height: usize, width: usize, rgb: [T; 3]) -> Result<Self, ImagingError> {
        let data = (0..height * width).flat_map(|_| rgb).collect();
        Self::new(height, width, data)
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Result<Self, ImagingError> {
        let mut data = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                for ch in 0..3 {
                    data.push(f(y, x, ch));
                }
            }
        }
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, y: usize, x: usize, ch: usize) -> T {
        self.data[(y * self.width + x) * 3 + ch]
    }

    pub fn channel_means(&self) -> [T; 3] {
        let mut sums = [T::zero(); 3];
        for px in self.data.chunks_exact(3) {
            for ch in 0..3 {
                sums[ch] += px[ch];
            }
        }
        let n = T::of_usize(self.pixel_count());
        sums.map(|s| s / n)
    }

    /// Converts the element type, e.g. an `f32` image into `f64`.
    pub fn cast<U: Scalar>(&self) -> Image<U> {
        Image {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    pub(crate) fn from_raw_parts(height: usize, width: usize, data: Vec<T>) -> Self {
        debug_assert_eq!(data.len(), height * width * 3);
        Self {
            height,
            width,
            data,
        }
    }

    pub fn same_dims(&self, other: &Self) -> Result<(), ImagingError> {
        if self.dims() != other.dims() {
            return Err(ImagingError::ShapeMismatch {
                a_h: self.height,
                a_w: self.width,
                b_h: other.height,
                b_w: other.width,
            });
        }
        Ok(())
    }
}

pub(crate) fn clamp_unit<T: Scalar>(v: T) -> T {
    if v.is_nan() {
        T::zero()
    } else {
        v.max(T::zero()).min(T::one())
    }
}

/// Result of [`white_balance`]: the corrected image plus the per-channel
/// zero-mean warnings (`true` means that channel was passed through unscaled).
#[derive(Debug, Clone)]
pub struct WhiteBalanced<T> {
    pub image: Image<T>,
    pub scales: [T; 3],
    pub zero_channels: [bool; 3],
}

impl<T> WhiteBalanced<T> {
    pub fn has_warning(&self) -> bool {
        self.zero_channels.iter().any(|z| *z)
    }
}

/// Per-channel gray-world gains: `global_mean / channel_mean`, or 1 for a
/// channel whose mean is below [`ZERO_CHANNEL_EPS`].
pub fn gray_world_scales<T: Scalar>(means: [T; 3]) -> ([T; 3], [bool; 3]) {
    let global = (means[0] + means[1] + means[2]) / T::of(3.0);
    let mut zero = [false; 3];
    let mut scales = [T::one(); 3];
    for ch in 0..3 {
        if means[ch] < T::of(ZERO_CHANNEL_EPS) {
            zero[ch] = true;
        } else {
            scales[ch] = global / means[ch];
        }
    }
    (scales, zero)
}

/// Gray-world white balance, clamped back into `[0, 1]` after scaling.
pub fn white_balance<T: Scalar>(img: &Image<T>) -> WhiteBalanced<T> {
    let (scales, zero_channels) = gray_world_scales(img.channel_means());
    let mut data = img.data.clone();
    for px in data.chunks_exact_mut(3) {
        for ch in 0..3 {
            px[ch] = clamp_unit(px[ch] * scales[ch]);
        }
    }
    WhiteBalanced {
        image: Image::from_raw_parts(img.height, img.width, data),
        scales,
        zero_channels,
    }
}

/// Element-wise power law `v^gamma`.
pub fn gamma_correct<T: Scalar>(img: &Image<T>, gamma: T) -> Result<Image<T>, ImagingError> {
    if !(gamma.is_finite() && gamma > T::zero()) {
        return Err(ImagingError::InvalidGamma(gamma.as_f64()));
    }
    if gamma == T::one() {
        return Ok(img.clone());
    }
    let data = img.data.iter().map(|v| v.powf(gamma)).collect();
    Ok(Image::from_raw_parts(img.height, img.width, data))
}

/// Quantizes a unit-interval value onto the 256-level grid.
pub fn quantize_level<T: Scalar>(v: T) -> usize {
    let level = (clamp_unit(v).as_f64() * 255.0).round();
    (level as usize).min(HE_LEVELS - 1)
}

/// Classical equalization lookup table for one channel histogram.
///
/// Returns `None` for a degenerate (single-level) channel.
pub fn equalization_table(hist: &[usize; HE_LEVELS]) -> Option<[u8; HE_LEVELS]> {
    let total: usize = hist.iter().sum();
    let mut cdf = [0usize; HE_LEVELS];
    let mut acc = 0;
    for (c, h) in cdf.iter_mut().zip(hist) {
        acc += h;
        *c = acc;
    }
    let cdf_min = cdf.iter().copied().find(|c| *c > 0)?;
    if cdf_min == total {
        return None;
    }
    let denom = (total - cdf_min) as f64;
    let mut table = [0u8; HE_LEVELS];
    for (level, slot) in table.iter_mut().enumerate() {
        let num = cdf[level].saturating_sub(cdf_min) as f64;
        *slot = (255.0 * num / denom).round() as u8;
    }
    Some(table)
}

/// Independent per-channel histogram equalization on 256 quantized levels.
/// Constant channels are returned untouched.
pub fn hist_equalize<T: Scalar>(img: &Image<T>) -> Image<T> {
    let mut data = img.data.clone();
    for ch in 0..3 {
        let mut hist = [0usize; HE_LEVELS];
        for px in img.data.chunks_exact(3) {
            hist[quantize_level(px[ch])] += 1;
        }
        let Some(table) = equalization_table(&hist) else {
            continue;
        };
        let lut: Vec<T> = table
            .iter()
            .map(|l| T::of(*l as f64) / T::of(255.0))
            .collect();
        for (dst, src) in data.chunks_exact_mut(3).zip(img.data.chunks_exact(3)) {
            dst[ch] = lut[quantize_level(src[ch])];
        }
    }
    Image::from_raw_parts(img.height, img.width, data)
}

/// Peak signal-to-noise ratio on unit-range images.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Psnr {
    Db(f64),
    /// The images are identical.
    #[serde(with = "infinite_tag")]
    Infinite,
}

impl Psnr {
    pub fn db(self) -> f64 {
        match self {
            Psnr::Db(v) => v,
            Psnr::Infinite => f64::INFINITY,
        }
    }
}

mod infinite_tag {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str("inf")
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<(), D::Error> {
        let s = String::deserialize(d)?;
        if s == "inf" {
            Ok(())
        } else {
            Err(D::Error::custom("expected \"inf\""))
        }
    }
}

pub fn psnr<T: Scalar>(a: &Image<T>, b: &Image<T>) -> Result<Psnr, ImagingError> {
    a.same_dims(b)?;
    let sse: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| {
            let d = x.as_f64() - y.as_f64();
            d * d
        })
        .sum();
    let mse = sse / a.data.len() as f64;
    if mse == 0.0 {
        return Ok(Psnr::Infinite);
    }
    Ok(Psnr::Db(10.0 * (1.0 / mse).log10()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gray_levels(levels: &[u8]) -> Image<f64> {
        let data = levels.iter().flat_map(|l| [*l as f64 / 255.0; 3]).collect();
        Image::new(1, levels.len(), data).unwrap()
    }

    fn levels_of(img: &Image<f64>) -> Vec<u8> {
        img.as_slice()
            .chunks_exact(3)
            .map(|px| (px[0] * 255.0).round() as u8)
            .collect()
    }

    #[test]
    fn rejects_bad_buffers() {
        assert!(matches!(
            Image::<f64>::new(2, 2, vec![0.0; 11]),
            Err(ImagingError::BufferLength { .. })
        ));
        assert!(matches!(
            Image::<f64>::new(1, 1, vec![0.0, 1.5, 0.0]),
            Err(ImagingError::OutOfRange { index: 1, .. })
        ));
        assert!(Image::<f32>::new(0, 3, vec![]).is_err());
    }

    #[test]
    fn white_balance_equal_means_is_identity() {
        let img = Image::<f64>::from_fn(3, 4, |y, x, _| ((y * 4 + x) as f64) / 20.0).unwrap();
        let wb = white_balance(&img);
        assert_eq!(wb.image, img);
        assert!(!wb.has_warning());
    }

    #[test]
    fn white_balance_constant_image() {
        let img = Image::<f64>::filled(3, 3, [0.2, 0.4, 0.6]).unwrap();
        let wb = white_balance(&img);
        for v in wb.image.as_slice() {
            assert!((v - 0.4).abs() < 1e-12);
        }
    }

    #[test]
    fn white_balance_zero_channel_warns() {
        let img = Image::<f64>::from_fn(2, 2, |y, x, ch| {
            if ch == 0 {
                0.0
            } else {
                0.1 + 0.1 * (y + x) as f64
            }
        })
        .unwrap();
        let wb = white_balance(&img);
        assert_eq!(wb.zero_channels, [true, false, false]);
        for px in wb.image.as_slice().chunks_exact(3) {
            assert_eq!(px[0], 0.0);
        }
    }

    #[test]
    fn gamma_examples() {
        let img = Image::<f64>::filled(1, 1, [0.25, 0.0, 1.0]).unwrap();
        assert_eq!(gamma_correct(&img, 1.0).unwrap(), img);
        let out = gamma_correct(&img, 0.5).unwrap();
        assert_eq!(out.as_slice(), &[0.5, 0.0, 1.0]);
        let dark = gamma_correct(&img, 2.2).unwrap();
        assert_eq!(&dark.as_slice()[1..], &[0.0, 1.0]);
        for g in [0.0, -1.0, f64::NAN, f64::INFINITY] {
            assert!(matches!(
                gamma_correct(&img, g),
                Err(ImagingError::InvalidGamma(_))
            ));
        }
    }

    #[test]
    fn he_constant_image_unchanged() {
        let img = Image::<f64>::filled(4, 4, [0.3, 0.3, 0.9]).unwrap();
        assert_eq!(hist_equalize(&img), img);
    }

    #[test]
    fn he_two_levels_unchanged() {
        let out = hist_equalize(&gray_levels(&[0, 255]));
        assert_eq!(levels_of(&out), vec![0, 255]);
    }

    #[test]
    fn he_four_levels() {
        // cdf = (2, 3, 4), cdf_min = 2 -> round(255 * (cdf - 2) / 2)
        let out = hist_equalize(&gray_levels(&[10, 10, 20, 30]));
        assert_eq!(levels_of(&out), vec![0, 0, 128, 255]);
    }

    #[test]
    fn psnr_examples() {
        let zeros = Image::<f64>::filled(2, 2, [0.0; 3]).unwrap();
        let ones = Image::<f64>::filled(2, 2, [1.0; 3]).unwrap();
        let half = Image::<f64>::filled(2, 2, [0.5; 3]).unwrap();
        assert_eq!(psnr(&zeros, &zeros).unwrap(), Psnr::Infinite);
        assert_eq!(psnr(&zeros, &ones).unwrap(), Psnr::Db(0.0));
        let db = psnr(&zeros, &half).unwrap().db();
        assert!((db - 10.0 * 4f64.log10()).abs() < 1e-12);
        assert!((db - 6.0206).abs() < 1e-4);
        let other = Image::<f64>::filled(2, 3, [0.0; 3]).unwrap();
        assert!(matches!(
            psnr(&zeros, &other),
            Err(ImagingError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn psnr_serializes_infinite_as_tag() {
        let s = serde_json::to_string(&Psnr::Infinite).unwrap();
        assert_eq!(s, "\"inf\"");
        let back: Psnr = serde_json::from_str(&s).unwrap();
        assert_eq!(back, Psnr::Infinite);
        let back: Psnr = serde_json::from_str("12.5").unwrap();
        assert_eq!(back, Psnr::Db(12.5));
    }

    fn arb_image() -> impl Strategy<Value = Image<f64>> {
        (1usize..6, 1usize..6).prop_flat_map(|(h, w)| {
            proptest::collection::vec(0.0f64..=1.0, h * w * 3)
                .prop_map(move |data| Image::new(h, w, data).unwrap())
        })
    }

    proptest! {
        #[test]
        fn he_is_monotone_per_channel(img in arb_image()) {
            let out = hist_equalize(&img);
            let (a, b) = (img.as_slice(), out.as_slice());
            for ch in 0..3 {
                for i in (ch..a.len()).step_by(3) {
                    for j in (ch..a.len()).step_by(3) {
                        if a[i] <= a[j] {
                            prop_assert!(b[i] <= b[j]);
                        }
                    }
                }
            }
        }

        #[test]
        fn operators_preserve_dims_and_range(img in arb_image(), g in 0.1f64..4.0) {
            for out in [white_balance(&img).image, gamma_correct(&img, g).unwrap(), hist_equalize(&img)] {
                prop_assert_eq!(out.dims(), img.dims());
                prop_assert!(out.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }

        #[test]
        fn white_balance_idempotent_without_clamping(
            img in arb_image().prop_map(|i| {
                let d = i.as_slice().iter().map(|v| 0.2 + 0.3 * v).collect();
                Image::new(i.height(), i.width(), d).unwrap()
            })
        ) {
            let before = img.channel_means();
            let global = (before[0] + before[1] + before[2]) / 3.0;
            let once = white_balance(&img);
            let clamped = img.as_slice().chunks_exact(3)
                .any(|px| (0..3).any(|c| px[c] * once.scales[c] > 1.0));
            prop_assume!(!clamped);
            for m in once.image.channel_means() {
                prop_assert!((m - global).abs() < 1e-6);
            }
            let twice = white_balance(&once.image);
            for (a, b) in once.image.as_slice().iter().zip(twice.image.as_slice()) {
                prop_assert!((a - b).abs() < 1e-6);
            }
        }
    }
}
