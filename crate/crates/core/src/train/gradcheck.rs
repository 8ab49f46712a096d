use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{backward, equalized_output, evaluate_frozen};
use super::{GradientSet, LossConfig, TrainError};
use crate::imaging::Image;
use crate::model::{ModelConfig, ModelParams};
use crate::Scalar;

/// Minimum number of coordinates sampled by [`finite_diff_check`].
pub const MIN_COORDINATES: usize = 200;
/// Minimum number of positional-encoding coordinates sampled.
pub const MIN_POSITIONAL: usize = 20;

/// `|a - b| / (|a| + |b| + 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs() + 1e-8)
}

/// One checked coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordCheck {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checks: Vec<CoordCheck>,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&CoordCheck> {
        self.checks
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

/// Checks `grad` against central differences of `f` at `x` over every
/// coordinate and returns the largest relative error.
pub fn check_gradient(
    f: impl Fn(&[f64]) -> f64,
    x: &[f64],
    grad: &[f64],
    eps: f64,
) -> Result<f64, TrainError> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(TrainError::InvalidStep(eps));
    }
    let mut probe = x.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        probe[i] = x[i] + eps;
        let fp = f(&probe);
        probe[i] = x[i] - eps;
        let fm = f(&probe);
        probe[i] = x[i];
        worst = worst.max(relative_error(grad[i], (fp - fm) / (2.0 * eps)));
    }
    Ok(worst)
}

/// Deterministic coordinate subset: one coordinate from every tensor, all of
/// the fusion weights, at least [`MIN_POSITIONAL`] positional-encoding entries,
/// then uniform fill up to [`MIN_COORDINATES`].
fn select_coordinates<T: Scalar>(params: &ModelParams<T>, seed: u64) -> Vec<(String, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tensors = params.tensors();
    let mut chosen: Vec<(String, usize)> = Vec::new();
    let push = |name: &str, idx: usize, chosen: &mut Vec<(String, usize)>| {
        if !chosen.iter().any(|(n, i)| n == name && *i == idx) {
            chosen.push((name.to_string(), idx));
        }
    };
    for (name, t) in &tensors {
        let idx = rng.random_range(0..t.len());
        push(name, idx, &mut chosen);
    }
    for name in ["fusion.alpha", "fusion.beta", "fusion.gamma"] {
        push(name, 0, &mut chosen);
    }
    let pos_len = params.encoder.pos.len();
    for idx in sample(&mut rng, pos_len, MIN_POSITIONAL.min(pos_len)) {
        push("encoder.pos", idx, &mut chosen);
    }
    let total: usize = tensors.iter().map(|(_, t)| t.len()).sum();
    let target = MIN_COORDINATES.min(total);
    while chosen.len() < target {
        let mut flat = rng.random_range(0..total);
        for (name, t) in &tensors {
            if flat < t.len() {
                push(name, flat, &mut chosen);
                break;
            }
            flat -= t.len();
        }
    }
    chosen
}

/// Compares a supplied gradient against central differences of the total
/// loss. The equalized branch of the enhanced image is pinned at its value
/// for the unperturbed parameters.
pub fn finite_diff_check_against<T: Scalar>(
    params: &ModelParams<T>,
    x: &Image<T>,
    y: &Image<T>,
    cfg: &ModelConfig,
    lcfg: &LossConfig,
    eps: f64,
    gradients: &GradientSet<T>,
) -> Result<GradCheckReport, TrainError> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(TrainError::InvalidStep(eps));
    }
    let frozen = equalized_output(x, params, cfg)?;
    let coords = select_coordinates(params, cfg.seed);
    let eval = |name: &str, idx: usize, delta: f64| -> Result<f64, TrainError> {
        let mut p = params.clone();
        let t = p.tensor_mut(name).expect("selected from the parameter set");
        t.data_mut()[idx] += T::of(delta);
        Ok(evaluate_frozen(x, y, &p, cfg, lcfg, Some(&frozen))?.0.total)
    };
    let checks = coords
        .par_iter()
        .map(|(name, idx)| {
            let fp = eval(name, *idx, eps)?;
            let fm = eval(name, *idx, -eps)?;
            let numeric = (fp - fm) / (2.0 * eps);
            let analytic = gradients
                .grads
                .tensor(name)
                .expect("gradients mirror parameters")
                .data()[*idx]
                .as_f64();
            Ok(CoordCheck {
                tensor: name.clone(),
                index: *idx,
                analytic,
                numeric,
                rel_error: relative_error(analytic, numeric),
            })
        })
        .collect::<Result<Vec<_>, TrainError>>()?;
    let max_rel_error = checks.iter().map(|c| c.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        max_rel_error,
        checks,
    })
}

/// Checks [`backward`] against central differences with the default loss
/// weights.
pub fn finite_diff_check<T: Scalar>(
    params: &ModelParams<T>,
    x: &Image<T>,
    y: &Image<T>,
    cfg: &ModelConfig,
    eps: f64,
) -> Result<GradCheckReport, TrainError> {
    let lcfg = LossConfig::default();
    let grads = backward(x, y, params, cfg, &lcfg)?.gradients;
    finite_diff_check_against(params, x, y, cfg, &lcfg, eps, &grads)
}
