use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    norm_precision_curve, precision_curve, success_curve, EvalCurve, FramePair, NormMode,
    TrackingError,
};
use crate::dataset::Annotation;

/// Curves and headline rates of one sequence, or their mean over a dataset.
///
/// `pr` is the precision at 20 px, `sr` the success AUC and `npr` the
/// normalized-precision AUC.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceMetrics {
    pub frames: usize,
    pub precision: EvalCurve,
    pub success: EvalCurve,
    pub norm_precision: EvalCurve,
    pub pr: f64,
    pub sr: f64,
    pub npr: f64,
    pub success_at_05: f64,
}

impl SequenceMetrics {
    pub fn evaluate(frames: &[FramePair], mode: NormMode) -> Result<Self, TrackingError> {
        let (precision, pr) = precision_curve(frames)?;
        let (success, success_at_05) = success_curve(frames)?;
        let norm_precision = norm_precision_curve(frames, mode)?;
        Ok(Self {
            frames: frames.len(),
            sr: success.auc,
            npr: norm_precision.auc,
            precision,
            success,
            norm_precision,
            pr,
            success_at_05,
        })
    }

    /// Unweighted mean over sequences; `frames` is the total.
    pub fn mean<'a>(
        items: impl IntoIterator<Item = &'a SequenceMetrics>,
    ) -> Result<Self, TrackingError> {
        let items: Vec<&SequenceMetrics> = items.into_iter().collect();
        if items.is_empty() {
            return Err(TrackingError::EmptySequence);
        }
        let n = items.len() as f64;
        let avg = |f: fn(&SequenceMetrics) -> f64| items.iter().map(|m| f(m)).sum::<f64>() / n;
        Ok(Self {
            frames: items.iter().map(|m| m.frames).sum(),
            precision: EvalCurve::mean(items.iter().map(|m| &m.precision))?,
            success: EvalCurve::mean(items.iter().map(|m| &m.success))?,
            norm_precision: EvalCurve::mean(items.iter().map(|m| &m.norm_precision))?,
            pr: avg(|m| m.pr),
            sr: avg(|m| m.sr),
            npr: avg(|m| m.npr),
            success_at_05: avg(|m| m.success_at_05),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpeResult {
    pub mode: NormMode,
    pub sequences: BTreeMap<String, SequenceMetrics>,
    pub overall: SequenceMetrics,
}

/// One-pass evaluation of a tracker over every ground-truth sequence.
/// Predictions for sequences absent from `ground_truth` are ignored.
pub fn ope_evaluate(
    ground_truth: &BTreeMap<String, Vec<Annotation>>,
    results: &BTreeMap<String, Vec<Annotation>>,
    mode: NormMode,
) -> Result<OpeResult, TrackingError> {
    let mut jobs = Vec::with_capacity(ground_truth.len());
    for (name, gt) in ground_truth {
        let pred = results
            .get(name)
            .ok_or_else(|| TrackingError::MissingSequence(name.clone()))?;
        if pred.len() != gt.len() {
            return Err(TrackingError::FrameCountMismatch {
                sequence: name.clone(),
                expected: gt.len(),
                found: pred.len(),
            });
        }
        jobs.push((name, pred, gt));
    }
    let evaluated: Vec<(String, SequenceMetrics)> = jobs
        .into_par_iter()
        .map(|(name, pred, gt)| {
            let frames: Vec<FramePair> = pred.iter().copied().zip(gt.iter().copied()).collect();
            SequenceMetrics::evaluate(&frames, mode)
                .map(|m| (name.clone(), m))
                .map_err(|e| TrackingError::InSequence {
                    sequence: name.clone(),
                    source: Box::new(e),
                })
        })
        .collect::<Result<_, _>>()?;
    let sequences: BTreeMap<String, SequenceMetrics> = evaluated.into_iter().collect();
    let overall = SequenceMetrics::mean(sequences.values())?;
    Ok(OpeResult {
        mode,
        sequences,
        overall,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tracking::BoundingBox;

    fn bx(x: f64) -> Annotation {
        Some(BoundingBox::new(x, 0.0, 40.0, 30.0).unwrap())
    }

    fn fixture() -> (
        BTreeMap<String, Vec<Annotation>>,
        BTreeMap<String, Vec<Annotation>>,
    ) {
        let gt = BTreeMap::from([
            ("a".to_string(), vec![bx(0.0), bx(5.0), bx(10.0)]),
            ("b".to_string(), vec![bx(0.0), bx(0.0), None, bx(0.0)]),
        ]);
        let pred = BTreeMap::from([
            ("a".to_string(), vec![bx(0.0), bx(35.0), bx(12.0)]),
            ("b".to_string(), vec![bx(0.0), bx(21.0), None, None]),
        ]);
        (gt, pred)
    }

    #[test]
    fn single_sequence_equals_dataset() {
        let (mut gt, pred) = fixture();
        gt.remove("b");
        let r = ope_evaluate(&gt, &pred, NormMode::Diagonal).unwrap();
        let a = &r.sequences["a"];
        assert_eq!(r.overall.precision, a.precision);
        assert_eq!(
            (r.overall.pr, r.overall.sr, r.overall.npr),
            (a.pr, a.sr, a.npr)
        );
    }

    #[test]
    fn dataset_auc_is_mean_of_sequences() {
        let (gt, pred) = fixture();
        let r = ope_evaluate(&gt, &pred, NormMode::Diagonal).unwrap();
        let (a, b) = (&r.sequences["a"], &r.sequences["b"]);
        assert!((r.overall.sr - (a.sr + b.sr) / 2.0).abs() < 1e-15);
        assert!((r.overall.success.auc - (a.success.auc + b.success.auc) / 2.0).abs() < 1e-15);
        assert_eq!(a.pr, 2.0 / 3.0);
        assert_eq!(b.pr, 1.0 / 3.0);
        assert_eq!(r.overall.frames, 7);
    }

    #[test]
    fn missing_and_mismatched() {
        let (gt, mut pred) = fixture();
        pred.get_mut("b").unwrap().pop();
        assert!(matches!(
            ope_evaluate(&gt, &pred, NormMode::Diagonal),
            Err(TrackingError::FrameCountMismatch {
                expected: 4,
                found: 3,
                ..
            })
        ));
        pred.remove("b");
        assert!(
            matches!(ope_evaluate(&gt, &pred, NormMode::Diagonal), Err(TrackingError::MissingSequence(s)) if s == "b")
        );
    }

    #[test]
    fn order_of_insertion_is_irrelevant() {
        let (gt, pred) = fixture();
        let mut gt2 = BTreeMap::new();
        for (k, v) in gt.iter().rev() {
            gt2.insert(k.clone(), v.clone());
        }
        assert_eq!(
            ope_evaluate(&gt, &pred, NormMode::Diagonal).unwrap(),
            ope_evaluate(&gt2, &pred, NormMode::Diagonal).unwrap()
        );
    }
}
