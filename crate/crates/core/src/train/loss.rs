use rayon::prelude::*;

use super::{GradientSet, LatentTarget, LossBreakdown, LossConfig, TrainError};
use crate::imaging::{hist_equalize, Image};
use crate::model::{
    add_assign, decode_backward, decode_cached, dewindowize_dims, embed_cached, encode_backward,
    fuse_latents, head_backward, DecoderCache, Embedding, ModelConfig, ModelParams, TokenSequence,
};
use crate::Scalar;

/// Result of [`backward`].
#[derive(Debug, Clone)]
pub struct Backward<T> {
    pub breakdown: LossBreakdown,
    pub gradients: GradientSet<T>,
    /// The enhanced image the loss was evaluated on.
    pub output: Image<T>,
}

fn sgn<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

fn l1<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (*x - *y).abs().as_f64()).sum()
}

fn fused<T: Scalar>(emb: &Embedding<T>, params: &ModelParams<T>) -> TokenSequence<T> {
    let [u, wb, gc, he] = &emb.latents;
    let [_, a, b, g] = params.fusion.weights();
    fuse_latents([u, wb, gc, he], a, b, g).expect("branch latents share a shape")
}

fn breakdown<T: Scalar>(
    y_hat: &Image<T>,
    y: &Image<T>,
    hat: &Embedding<T>,
    target: &Embedding<T>,
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    lcfg: &LossConfig,
) -> LossBreakdown {
    let appearance = l1(y.as_slice(), y_hat.as_slice());
    let perceptual = l1(&target.features[0].data, &hat.features[0].data);
    let latent = match lcfg.latent {
        LatentTarget::AllBranches => (0..4)
            .map(|b| l1(&target.latents[b].data, &hat.latents[b].data))
            .sum(),
        LatentTarget::FusedOnly => l1(&fused(target, params).data, &fused(hat, params).data),
    };
    LossBreakdown::new(appearance, perceptual, latent, lcfg.lambdas(cfg))
}

/// Loss of an enhanced image `y_hat` against the target `y`.
pub fn loss<T: Scalar>(
    y_hat: &Image<T>,
    y: &Image<T>,
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    lcfg: &LossConfig,
) -> Result<LossBreakdown, TrainError> {
    let hat = embed_cached(params, cfg, y_hat, None)?;
    let target = embed_cached(params, cfg, y, None)?;
    Ok(breakdown(y_hat, y, &hat, &target, params, cfg, lcfg))
}

struct Pass<T> {
    x: Embedding<T>,
    fused: TokenSequence<T>,
    decoder: DecoderCache<T>,
    y_hat: Image<T>,
    hat: Embedding<T>,
    target: Embedding<T>,
}

fn run<T: Scalar>(
    x: &Image<T>,
    y: &Image<T>,
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    frozen_equalized: Option<&Image<T>>,
) -> Result<Pass<T>, TrainError> {
    cfg.validate()?;
    x.same_dims(y).map_err(crate::model::ModelError::from)?;
    let x_emb = embed_cached(params, cfg, x, None)?;
    let fused = fused(&x_emb, params);
    let (y_hat, decoder) = decode_cached(&params.decoder, &fused, cfg)?;
    let (hat, target) = rayon::join(
        || embed_cached(params, cfg, &y_hat, frozen_equalized),
        || embed_cached(params, cfg, y, None),
    );
    Ok(Pass {
        x: x_emb,
        fused,
        decoder,
        y_hat,
        hat: hat?,
        target: target?,
    })
}

/// Forward pass plus loss; the equalized branch of the output may be pinned.
pub(crate) fn evaluate_frozen<T: Scalar>(
    x: &Image<T>,
    y: &Image<T>,
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    lcfg: &LossConfig,
    frozen_equalized: Option<&Image<T>>,
) -> Result<(LossBreakdown, Image<T>), TrainError> {
    let pass = run(x, y, params, cfg, frozen_equalized)?;
    let b = breakdown(&pass.y_hat, y, &pass.hat, &pass.target, params, cfg, lcfg);
    Ok((b, pass.y_hat))
}

/// Enhances `x` and scores it against `y`.
pub fn evaluate<T: Scalar>(
    x: &Image<T>,
    y: &Image<T>,
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    lcfg: &LossConfig,
) -> Result<LossBreakdown, TrainError> {
    Ok(evaluate_frozen(x, y, params, cfg, lcfg, None)?.0)
}

/// Equalized-branch input that [`backward`] treats as a constant: the
/// equalization of the current output.
pub(crate) fn equalized_output<T: Scalar>(
    x: &Image<T>,
    params: &ModelParams<T>,
    cfg: &ModelConfig,
) -> Result<Image<T>, TrainError> {
    let out = crate::model::forward(x, params, cfg)?;
    Ok(hist_equalize(&out.output))
}

/// Gradient of the head+encoder pipeline for one branch. Returns parameter
/// gradients and, when requested, the gradient with respect to the branch
/// input image.
fn branch_backward<T: Scalar>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    emb: &Embedding<T>,
    branch: usize,
    dlatent: Vec<T>,
    dfeatures: Option<&[T]>,
    need_image: bool,
) -> (ModelParams<T>, Option<Vec<T>>) {
    let mut g = params.zeros_like();
    let (n, d) = (cfg.n_tokens(), cfg.token_dim());
    let dtok = encode_backward(
        &params.encoder,
        &emb.enc_caches[branch],
        n,
        cfg.heads,
        dlatent,
        &mut g.encoder,
    );
    let tokens = TokenSequence { n, d, data: dtok };
    let mut dfeat = dewindowize_dims(&tokens, cfg.height, cfg.width, cfg.channels, cfg.patch)
        .expect("config validated")
        .data;
    if let Some(extra) = dfeatures {
        add_assign(&mut dfeat, extra);
    }
    let dimg = head_backward(
        &params.head,
        &emb.head_caches[branch],
        cfg.height,
        cfg.width,
        dfeat,
        &mut g.head,
        need_image,
    );
    (g, dimg)
}

/// Adjoint of gray-world white balance (with clamping) at `src`.
fn white_balance_adjoint<T: Scalar>(
    src: &Image<T>,
    scales: [T; 3],
    zero: [bool; 3],
    dout: &[T],
) -> Vec<T> {
    let means = src.channel_means();
    let global = (means[0] + means[1] + means[2]) / T::of(3.0);
    let n = T::of_usize(src.pixel_count());
    let mut dsrc = vec![T::zero(); dout.len()];
    let mut dscale = [T::zero(); 3];
    for (i, px) in src.as_slice().chunks_exact(3).enumerate() {
        for ch in 0..3 {
            let g = dout[i * 3 + ch];
            if zero[ch] {
                dsrc[i * 3 + ch] = g;
                continue;
            }
            let scaled = px[ch] * scales[ch];
            if scaled > T::zero() && scaled < T::one() {
                dsrc[i * 3 + ch] = g * scales[ch];
                dscale[ch] += g * px[ch];
            }
        }
    }
    let mut dglobal = T::zero();
    for ch in 0..3 {
        if !zero[ch] {
            dglobal += dscale[ch] / means[ch];
        }
    }
    let mut dmean = [T::zero(); 3];
    for ch in 0..3 {
        dmean[ch] = dglobal / T::of(3.0);
        if !zero[ch] {
            dmean[ch] -= dscale[ch] * global / (means[ch] * means[ch]);
        }
    }
    for (i, v) in dsrc.iter_mut().enumerate() {
        *v += dmean[i % 3] / n;
    }
    dsrc
}

fn gamma_adjoint<T: Scalar>(src: &Image<T>, gamma: T, dout: &[T]) -> Vec<T> {
    if gamma == T::one() {
        return dout.to_vec();
    }
    src.as_slice()
        .iter()
        .zip(dout)
        .map(|(v, g)| {
            if *v > T::zero() {
                *g * gamma * v.powf(gamma - T::one())
            } else {
                T::zero()
            }
        })
        .collect()
}

fn backward_with<T: Scalar>(
    x: &Image<T>,
    y: &Image<T>,
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    lcfg: &LossConfig,
    frozen_equalized: Option<&Image<T>>,
) -> Result<Backward<T>, TrainError> {
    let pass = run(x, y, params, cfg, frozen_equalized)?;
    let breakdown = breakdown(&pass.y_hat, y, &pass.hat, &pass.target, params, cfg, lcfg);
    let [l1w, l2w, l3w] = lcfg.lambdas(cfg).map(T::of);
    let weights = params.fusion.weights();
    let mut total = GradientSet::zeros_like(params);

    // Seeds from the three ℓ1 terms.
    let mut dy_hat: Vec<T> = pass
        .y_hat
        .as_slice()
        .iter()
        .zip(y.as_slice())
        .map(|(a, b)| l1w * sgn(*a - *b))
        .collect();
    let dfeat_hat: Vec<T> = pass.hat.features[0]
        .data
        .iter()
        .zip(&pass.target.features[0].data)
        .map(|(a, b)| l2w * sgn(*a - *b))
        .collect();
    let dfeat_target: Vec<T> = dfeat_hat.iter().map(|v| -*v).collect();

    let (dlat_hat, dlat_target): (Vec<Vec<T>>, Vec<Vec<T>>) = match lcfg.latent {
        LatentTarget::AllBranches => (0..4)
            .map(|b| {
                let g: Vec<T> = pass.hat.latents[b]
                    .data
                    .iter()
                    .zip(&pass.target.latents[b].data)
                    .map(|(a, c)| l3w * sgn(*a - *c))
                    .collect();
                let neg = g.iter().map(|v| -*v).collect();
                (g, neg)
            })
            .unzip(),
        LatentTarget::FusedOnly => {
            let fh = fused(&pass.hat, params);
            let ft = fused(&pass.target, params);
            let g: Vec<T> = fh
                .data
                .iter()
                .zip(&ft.data)
                .map(|(a, c)| l3w * sgn(*a - *c))
                .collect();
            let fusion = &mut total.grads.fusion;
            for (k, slot) in [&mut fusion.alpha, &mut fusion.beta, &mut fusion.gamma]
                .into_iter()
                .enumerate()
            {
                let dh: T = crate::model::dot(&g, &pass.hat.latents[k + 1].data);
                let dt: T = crate::model::dot(&g, &pass.target.latents[k + 1].data);
                slot.data_mut()[0] += dh - dt;
            }
            (0..4)
                .map(|b| {
                    let gh: Vec<T> = g.iter().map(|v| weights[b] * *v).collect();
                    let gt = gh.iter().map(|v| -*v).collect();
                    (gh, gt)
                })
                .unzip()
        }
    };

    // Output and target embeddings; only the output side needs image gradients.
    let mut jobs: Vec<(bool, usize, Vec<T>)> = Vec::with_capacity(8);
    for (b, g) in dlat_hat.into_iter().enumerate() {
        jobs.push((true, b, g));
    }
    for (b, g) in dlat_target.into_iter().enumerate() {
        jobs.push((false, b, g));
    }
    let results: Vec<(ModelParams<T>, Option<Vec<T>>)> = jobs
        .into_par_iter()
        .map(|(is_hat, b, g)| {
            let (emb, dfeat) = if is_hat {
                (&pass.hat, &dfeat_hat)
            } else {
                (&pass.target, &dfeat_target)
            };
            // The equalized branch is a step function of its input.
            let need_image = is_hat && b != 3;
            branch_backward(
                params,
                cfg,
                emb,
                b,
                g,
                (b == 0).then_some(dfeat.as_slice()),
                need_image,
            )
        })
        .collect();

    let gamma = T::of(cfg.gamma);
    let branches = &pass.hat.branches;
    for (idx, (g, dimg)) in results.into_iter().enumerate() {
        total.add(&GradientSet { grads: g });
        let Some(dimg) = dimg else { continue };
        let contrib = match idx {
            0 => dimg,
            1 => white_balance_adjoint(&pass.y_hat, branches.wb_scales, branches.wb_zero, &dimg),
            2 => gamma_adjoint(&pass.y_hat, gamma, &dimg),
            _ => continue,
        };
        add_assign(&mut dy_hat, &contrib);
    }

    // Decoder, then fusion, then the input embedding.
    let mut dec_grad = params.zeros_like();
    let dfused = decode_backward(
        &params.decoder,
        &pass.decoder,
        cfg,
        &dy_hat,
        &mut dec_grad.decoder,
    );
    total.add(&GradientSet { grads: dec_grad });
    {
        let fusion = &mut total.grads.fusion;
        for (k, slot) in [&mut fusion.alpha, &mut fusion.beta, &mut fusion.gamma]
            .into_iter()
            .enumerate()
        {
            slot.data_mut()[0] += crate::model::dot(&dfused, &pass.x.latents[k + 1].data);
        }
    }
    let _ = &pass.fused;
    let input_grads: Vec<ModelParams<T>> = (0..4)
        .into_par_iter()
        .filter(|b| weights[*b] != T::zero())
        .map(|b| {
            let g: Vec<T> = dfused.iter().map(|v| weights[b] * *v).collect();
            branch_backward(params, cfg, &pass.x, b, g, None, false).0
        })
        .collect();
    for g in input_grads {
        total.add(&GradientSet { grads: g });
    }

    Ok(Backward {
        breakdown,
        gradients: total,
        output: pass.y_hat,
    })
}

/// Exact gradient of the total loss with respect to every parameter.
///
/// The equalized branch of the enhanced image is held constant (its mapping
/// is piecewise constant in the pixel values); white balance and gamma are
/// differentiated through. The ℓ1 subgradient at zero is zero.
pub fn backward<T: Scalar>(
    x: &Image<T>,
    y: &Image<T>,
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    lcfg: &LossConfig,
) -> Result<Backward<T>, TrainError> {
    backward_with(x, y, params, cfg, lcfg, None)
}
