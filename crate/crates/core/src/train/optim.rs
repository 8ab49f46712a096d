use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{backward, Backward};
use super::{GradientSet, LossBreakdown, LossConfig, TrainError};
use crate::imaging::{Image, Psnr};
use crate::model::{ModelConfig, ModelParams};
use crate::Scalar;

/// One line of the JSONL training log. Loss terms are the weighted
/// contributions, so `appearance + perceptual + latent == total`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRecord {
    pub step: usize,
    pub total: f64,
    pub appearance: f64,
    pub perceptual: f64,
    pub latent: f64,
    pub psnr: Psnr,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

struct StepOutcome<T> {
    params: ModelParams<T>,
    breakdown: LossBreakdown,
    psnr: Psnr,
}

fn batch_psnr<T: Scalar>(outputs: &[&Image<T>], targets: &[&Image<T>]) -> Psnr {
    let mut sq = 0.0;
    let mut count = 0usize;
    for (a, b) in outputs.iter().zip(targets) {
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            let d = x.as_f64() - y.as_f64();
            sq += d * d;
        }
        count += a.as_slice().len();
    }
    let mse = sq / count.max(1) as f64;
    if mse == 0.0 {
        Psnr::Infinite
    } else {
        Psnr::Db(10.0 * (1.0 / mse).log10())
    }
}

fn step_inner<T: Scalar>(
    params: &ModelParams<T>,
    batch: &[(Image<T>, Image<T>)],
    lr: f64,
    cfg: &ModelConfig,
    lcfg: &LossConfig,
) -> Result<StepOutcome<T>, TrainError> {
    if !(lr.is_finite() && lr >= 0.0) {
        return Err(TrainError::InvalidLR(lr));
    }
    if batch.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let results: Vec<Backward<T>> = batch
        .par_iter()
        .map(|(x, y)| backward(x, y, params, cfg, lcfg))
        .collect::<Result<_, _>>()?;
    let mut grad = GradientSet::zeros_like(params);
    for r in &results {
        grad.add(&r.gradients);
    }
    let breakdowns: Vec<LossBreakdown> = results.iter().map(|r| r.breakdown).collect();
    let outputs: Vec<&Image<T>> = results.iter().map(|r| &r.output).collect();
    let targets: Vec<&Image<T>> = batch.iter().map(|(_, y)| y).collect();
    let psnr = batch_psnr(&outputs, &targets);

    let mut next = params.clone();
    if lr > 0.0 {
        let step = T::of(lr) / T::of_usize(batch.len());
        next.zip_mut(&grad.grads, |p, g| {
            for (v, d) in p.data_mut().iter_mut().zip(g.data()) {
                *v -= step * *d;
            }
        });
    }
    Ok(StepOutcome {
        params: next,
        breakdown: LossBreakdown::mean(&breakdowns),
        psnr,
    })
}

/// One plain gradient-descent step on the batch mean gradient. Returns the
/// updated parameters and the mean loss before the update.
pub fn train_step<T: Scalar>(
    params: &ModelParams<T>,
    batch: &[(Image<T>, Image<T>)],
    lr: f64,
    cfg: &ModelConfig,
    lcfg: &LossConfig,
) -> Result<(ModelParams<T>, LossBreakdown), TrainError> {
    let out = step_inner(params, batch, lr, cfg, lcfg)?;
    Ok((out.params, out.breakdown))
}

/// Runs `steps` full-batch steps, reporting one record per step (loss measured
/// before that step's update) to `on_step`.
pub fn train<T: Scalar>(
    params: ModelParams<T>,
    batch: &[(Image<T>, Image<T>)],
    steps: usize,
    lr: f64,
    cfg: &ModelConfig,
    lcfg: &LossConfig,
    mut on_step: impl FnMut(&TrainLogRecord),
) -> Result<(ModelParams<T>, Vec<TrainLogRecord>), TrainError> {
    let mut params = params;
    let mut log = Vec::with_capacity(steps);
    for step in 0..steps {
        let [alpha, beta, gamma] = [
            params.fusion.alpha.data()[0],
            params.fusion.beta.data()[0],
            params.fusion.gamma.data()[0],
        ]
        .map(|v| v.as_f64());
        let out = step_inner(&params, batch, lr, cfg, lcfg)?;
        let [appearance, perceptual, latent] = out.breakdown.weighted();
        let record = TrainLogRecord {
            step,
            total: out.breakdown.total,
            appearance,
            perceptual,
            latent,
            psnr: out.psnr,
            alpha,
            beta,
            gamma,
        };
        on_step(&record);
        log.push(record);
        params = out.params;
    }
    Ok((params, log))
}
