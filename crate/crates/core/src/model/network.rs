use rayon::prelude::*;

use super::layers::{relu_in_place, relu_mask, EncoderLayerCache, ResCache};
use super::params::{Decoder, Encoder, FeatureHead, ModelParams};
use super::tensor::add_assign;
use super::tokens::{dewindowize_dims, windowize, FeatureMap, TokenSequence};
use super::{ModelConfig, ModelError};
use crate::imaging::{gamma_correct, hist_equalize, white_balance, Image};
use crate::Scalar;

/// The four inputs fed through the shared head and encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Raw,
    WhiteBalance,
    Gamma,
    Equalized,
}

pub const BRANCHES: [Branch; 4] = [
    Branch::Raw,
    Branch::WhiteBalance,
    Branch::Gamma,
    Branch::Equalized,
];

/// Output of [`forward`]: the enhanced image plus intermediates.
#[derive(Debug, Clone)]
pub struct ForwardOutput<T> {
    pub output: Image<T>,
    /// Branch latents in [`BRANCHES`] order.
    pub latents: [TokenSequence<T>; 4],
    pub fused: TokenSequence<T>,
}

#[derive(Debug, Clone)]
pub(crate) struct HeadCache<T> {
    input: Vec<T>,
    stem: Vec<T>,
    blocks: [ResCache<T>; 2],
}

pub(crate) fn head_forward_cached<T: Scalar>(
    head: &FeatureHead<T>,
    input: &[T],
    h: usize,
    w: usize,
) -> (Vec<T>, HeadCache<T>) {
    let mut stem = head.stem.forward(input, h, w);
    relu_in_place(&mut stem);
    let (b0, c0) = head.blocks[0].forward_cached(stem.clone(), h, w);
    let (b1, c1) = head.blocks[1].forward_cached(b0, h, w);
    let cache = HeadCache {
        input: input.to_vec(),
        stem,
        blocks: [c0, c1],
    };
    (b1, cache)
}

pub(crate) fn head_backward<T: Scalar>(
    head: &FeatureHead<T>,
    cache: &HeadCache<T>,
    h: usize,
    w: usize,
    dout: Vec<T>,
    grad: &mut FeatureHead<T>,
    need_input: bool,
) -> Option<Vec<T>> {
    let d1 = head.blocks[1]
        .backward(&cache.blocks[1], h, w, dout, &mut grad.blocks[1], true)
        .expect("input gradient requested");
    let mut d0 = head.blocks[0]
        .backward(&cache.blocks[0], h, w, d1, &mut grad.blocks[0], true)
        .expect("input gradient requested");
    relu_mask(&mut d0, &cache.stem);
    head.stem
        .backward(&cache.input, h, w, &d0, &mut grad.stem, need_input)
}

#[derive(Debug, Clone)]
pub(crate) struct EncoderCache<T> {
    layers: Vec<EncoderLayerCache<T>>,
}

pub(crate) fn encode_cached<T: Scalar>(
    enc: &Encoder<T>,
    tokens: &TokenSequence<T>,
    heads: usize,
) -> (TokenSequence<T>, EncoderCache<T>) {
    let (n, d) = (tokens.n, tokens.d);
    let mut p = tokens.data.clone();
    add_assign(&mut p, enc.pos.data());
    let mut caches = Vec::with_capacity(enc.layers.len());
    for layer in &enc.layers {
        let (next, cache) = layer.forward_cached(&p, n, heads);
        caches.push(cache);
        p = next;
    }
    (
        TokenSequence { n, d, data: p },
        EncoderCache { layers: caches },
    )
}

/// Returns the gradient with respect to the input tokens; the positional
/// encoding receives the same gradient.
pub(crate) fn encode_backward<T: Scalar>(
    enc: &Encoder<T>,
    cache: &EncoderCache<T>,
    n: usize,
    heads: usize,
    dout: Vec<T>,
    grad: &mut Encoder<T>,
) -> Vec<T> {
    let mut g = dout;
    for (i, layer) in enc.layers.iter().enumerate().rev() {
        g = layer.backward(&cache.layers[i], n, heads, &g, &mut grad.layers[i]);
    }
    add_assign(grad.pos.data_mut(), &g);
    g
}

/// Classical pre-enhancements of one image, in [`BRANCHES`] order.
pub(crate) struct BranchImages<T> {
    pub images: [Image<T>; 4],
    pub wb_scales: [T; 3],
    pub wb_zero: [bool; 3],
}

pub(crate) fn branch_images<T: Scalar>(
    img: &Image<T>,
    gamma: T,
    equalized: Option<&Image<T>>,
) -> Result<BranchImages<T>, ModelError> {
    let wb = white_balance(img);
    let gc = gamma_correct(img, gamma)?;
    let he = match equalized {
        Some(e) => e.clone(),
        None => hist_equalize(img),
    };
    Ok(BranchImages {
        images: [img.clone(), wb.image, gc, he],
        wb_scales: wb.scales,
        wb_zero: wb.zero_channels,
    })
}

/// Head features and encoder latents of the four branches of one image.
pub(crate) struct Embedding<T> {
    pub branches: BranchImages<T>,
    pub features: [FeatureMap<T>; 4],
    pub latents: [TokenSequence<T>; 4],
    pub head_caches: [HeadCache<T>; 4],
    pub enc_caches: [EncoderCache<T>; 4],
}

/// Runs the shared head and encoder over all four branches of `img`.
/// `equalized` overrides the histogram-equalized branch input.
pub(crate) fn embed_cached<T: Scalar>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    img: &Image<T>,
    equalized: Option<&Image<T>>,
) -> Result<Embedding<T>, ModelError> {
    cfg.check_image(img.height(), img.width())?;
    let branches = branch_images(img, T::of(cfg.gamma), equalized)?;
    let (h, w, c) = (cfg.height, cfg.width, cfg.channels);
    let per_branch: Vec<_> = branches
        .images
        .par_iter()
        .map(|bimg| {
            let (feat, hc) = head_forward_cached(&params.head, bimg.as_slice(), h, w);
            let fmap = FeatureMap {
                height: h,
                width: w,
                channels: c,
                data: feat,
            };
            let tokens = windowize(&fmap, cfg.patch).expect("config validated");
            let (latent, ec) = encode_cached(&params.encoder, &tokens, cfg.heads);
            (fmap, latent, hc, ec)
        })
        .collect();
    let mut features = Vec::with_capacity(4);
    let mut latents = Vec::with_capacity(4);
    let mut head_caches = Vec::with_capacity(4);
    let mut enc_caches = Vec::with_capacity(4);
    for (f, l, hc, ec) in per_branch {
        features.push(f);
        latents.push(l);
        head_caches.push(hc);
        enc_caches.push(ec);
    }
    Ok(Embedding {
        branches,
        features: into_array(features),
        latents: into_array(latents),
        head_caches: into_array(head_caches),
        enc_caches: into_array(enc_caches),
    })
}

pub(crate) fn into_array<X>(v: Vec<X>) -> [X; 4] {
    v.try_into()
        .unwrap_or_else(|_| panic!("expected four branches"))
}

#[derive(Debug, Clone)]
pub(crate) struct DecoderCache<T> {
    input: Vec<T>,
    stem: Vec<T>,
    blocks: [ResCache<T>; 2],
    block_out: Vec<T>,
    pre_clamp: Vec<T>,
}

pub(crate) fn decode_cached<T: Scalar>(
    dec: &Decoder<T>,
    latent: &TokenSequence<T>,
    cfg: &ModelConfig,
) -> Result<(Image<T>, DecoderCache<T>), ModelError> {
    let (h, w) = (cfg.height, cfg.width);
    let fmap = dewindowize_dims(latent, h, w, cfg.channels, cfg.patch)?;
    let mut stem = dec.stem.forward(&fmap.data, h, w);
    relu_in_place(&mut stem);
    let (b0, c0) = dec.blocks[0].forward_cached(stem.clone(), h, w);
    let (b1, c1) = dec.blocks[1].forward_cached(b0, h, w);
    let pre_clamp = dec.out.forward(&b1, h, w);
    let img = Image::from_clamped(h, w, pre_clamp.clone())?;
    let cache = DecoderCache {
        input: fmap.data,
        stem,
        blocks: [c0, c1],
        block_out: b1,
        pre_clamp,
    };
    Ok((img, cache))
}

/// Gradient of the decoder output with respect to its token input.
pub(crate) fn decode_backward<T: Scalar>(
    dec: &Decoder<T>,
    cache: &DecoderCache<T>,
    cfg: &ModelConfig,
    dimage: &[T],
    grad: &mut Decoder<T>,
) -> Vec<T> {
    let (h, w) = (cfg.height, cfg.width);
    let mut dpre = dimage.to_vec();
    for (g, v) in dpre.iter_mut().zip(&cache.pre_clamp) {
        if !(*v > T::zero() && *v < T::one()) {
            *g = T::zero();
        }
    }
    let d1 = dec
        .out
        .backward(&cache.block_out, h, w, &dpre, &mut grad.out, true)
        .expect("input gradient requested");
    let d0 = dec.blocks[1]
        .backward(&cache.blocks[1], h, w, d1, &mut grad.blocks[1], true)
        .expect("input gradient requested");
    let mut ds = dec.blocks[0]
        .backward(&cache.blocks[0], h, w, d0, &mut grad.blocks[0], true)
        .expect("input gradient requested");
    relu_mask(&mut ds, &cache.stem);
    let dfeat = dec
        .stem
        .backward(&cache.input, h, w, &ds, &mut grad.stem, true)
        .expect("input gradient requested");
    let fmap = FeatureMap {
        height: h,
        width: w,
        channels: cfg.channels,
        data: dfeat,
    };
    windowize(&fmap, cfg.patch).expect("config validated").data
}

/// Feature head: `conv -> ReLU -> 2 x residual block`, same padding.
pub fn extract_features<T: Scalar>(
    img: &Image<T>,
    params: &ModelParams<T>,
    cfg: &ModelConfig,
) -> Result<FeatureMap<T>, ModelError> {
    cfg.check_image(img.height(), img.width())?;
    let (h, w) = img.dims();
    let mut x = params.head.stem.forward(img.as_slice(), h, w);
    relu_in_place(&mut x);
    for b in &params.head.blocks {
        x = b.forward(&x, h, w);
    }
    FeatureMap::new(h, w, cfg.channels, x)
}

/// Adds the positional encoding and applies every encoder layer.
pub fn encode<T: Scalar>(
    tokens: &TokenSequence<T>,
    params: &ModelParams<T>,
    cfg: &ModelConfig,
) -> Result<TokenSequence<T>, ModelError> {
    let pos = &params.encoder.pos;
    if pos.shape() != [tokens.n, tokens.d] || !tokens.d.is_multiple_of(cfg.heads) {
        return Err(ModelError::ShapeMismatch(format!(
            "tokens {}x{} vs positional encoding {:?}",
            tokens.n,
            tokens.d,
            pos.shape()
        )));
    }
    Ok(encode_cached(&params.encoder, tokens, cfg.heads).0)
}

/// `U + alpha * U_wb + beta * U_gc + gamma * U_he`. Zero weights skip their
/// term entirely, so all-zero weights return `U` unchanged.
pub fn fuse_latents<T: Scalar>(
    latents: [&TokenSequence<T>; 4],
    alpha: T,
    beta: T,
    gamma: T,
) -> Result<TokenSequence<T>, ModelError> {
    let [u, wb, gc, he] = latents;
    for other in [wb, gc, he] {
        u.same_shape(other)?;
    }
    let mut out = u.clone();
    for (weight, term) in [(alpha, wb), (beta, gc), (gamma, he)] {
        if weight == T::zero() {
            continue;
        }
        for (o, v) in out.data.iter_mut().zip(&term.data) {
            *o += weight * *v;
        }
    }
    Ok(out)
}

/// Decoder: tokens back to a map, `conv -> ReLU -> 2 x residual block ->
/// conv(3)`, clamped to `[0, 1]`.
pub fn decode<T: Scalar>(
    latent: &TokenSequence<T>,
    params: &ModelParams<T>,
    cfg: &ModelConfig,
) -> Result<Image<T>, ModelError> {
    Ok(decode_cached(&params.decoder, latent, cfg)?.0)
}

/// Full enhancement pass.
pub fn forward<T: Scalar>(
    x: &Image<T>,
    params: &ModelParams<T>,
    cfg: &ModelConfig,
) -> Result<ForwardOutput<T>, ModelError> {
    cfg.validate()?;
    let emb = embed_cached(params, cfg, x, None)?;
    let [u, wb, gc, he] = &emb.latents;
    let fused = fuse_latents(
        [u, wb, gc, he],
        params.fusion.alpha.data()[0],
        params.fusion.beta.data()[0],
        params.fusion.gamma.data()[0],
    )?;
    let output = decode(&fused, params, cfg)?;
    Ok(ForwardOutput {
        output,
        latents: emb.latents,
        fused,
    })
}
