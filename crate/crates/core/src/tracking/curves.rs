use serde::{Deserialize, Serialize};

use super::{center_error, iou, norm_center_error, BoundingBox, NormMode, TrackingError};

/// `(prediction, ground truth)` for one frame; `None` marks an absent box.
pub type FramePair = (Option<BoundingBox>, Option<BoundingBox>);

/// Center-error threshold at which the precision rate is read off.
pub const PRECISION_AT_PX: f64 = 20.0;
/// Overlap threshold at which the success rate is read off.
pub const SUCCESS_AT_IOU: f64 = 0.5;

/// 0, 1, ..., 50 pixels.
pub fn precision_thresholds() -> Vec<f64> {
    (0..=50).map(f64::from).collect()
}

/// 0, 0.05, ..., 1.
pub fn success_thresholds() -> Vec<f64> {
    (0..=20).map(|i| f64::from(i) / 20.0).collect()
}

/// 0, 0.01, ..., 0.5.
pub fn norm_precision_thresholds() -> Vec<f64> {
    (0..=50).map(|i| f64::from(i) / 100.0).collect()
}

/// Scores over an increasing threshold grid, summarized by their mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCurve {
    pub thresholds: Vec<f64>,
    pub scores: Vec<f64>,
    pub auc: f64,
}

impl EvalCurve {
    pub fn new(thresholds: Vec<f64>, scores: Vec<f64>) -> Result<Self, TrackingError> {
        if thresholds.is_empty()
            || thresholds.len() != scores.len()
            || thresholds
                .windows(2)
                .any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less))
        {
            return Err(TrackingError::GridMismatch);
        }
        let auc = scores.iter().sum::<f64>() / scores.len() as f64;
        Ok(Self {
            thresholds,
            scores,
            auc,
        })
    }

    /// Score at a grid threshold, `None` when `t` is not on the grid.
    pub fn score_at(&self, t: f64) -> Option<f64> {
        self.thresholds
            .iter()
            .position(|x| (x - t).abs() < 1e-12)
            .map(|i| self.scores[i])
    }

    /// Pointwise mean of curves sharing one grid; the AUC is the mean of theirs.
    pub fn mean<'a>(
        curves: impl IntoIterator<Item = &'a EvalCurve>,
    ) -> Result<Self, TrackingError> {
        let curves: Vec<&EvalCurve> = curves.into_iter().collect();
        let first = curves.first().ok_or(TrackingError::EmptySequence)?;
        let n = curves.len() as f64;
        let mut scores = vec![0.0; first.scores.len()];
        let mut auc = 0.0;
        for c in &curves {
            if c.thresholds != first.thresholds {
                return Err(TrackingError::GridMismatch);
            }
            for (s, v) in scores.iter_mut().zip(&c.scores) {
                *s += v;
            }
            auc += c.auc;
        }
        scores.iter_mut().for_each(|s| *s /= n);
        Ok(Self {
            thresholds: first.thresholds.clone(),
            scores,
            auc: auc / n,
        })
    }
}

/// Fraction of `errors` at or below each threshold.
fn at_most_curve(errors: &[f64], thresholds: Vec<f64>) -> Result<EvalCurve, TrackingError> {
    if errors.is_empty() {
        return Err(TrackingError::EmptySequence);
    }
    let n = errors.len() as f64;
    let scores = thresholds
        .iter()
        .map(|t| errors.iter().filter(|e| **e <= *t).count() as f64 / n)
        .collect();
    EvalCurve::new(thresholds, scores)
}

/// Center-error precision. Frames without a ground-truth box are skipped; a
/// missing prediction never falls within a threshold. Returns the curve and
/// the precision at [`PRECISION_AT_PX`].
pub fn precision_curve(frames: &[FramePair]) -> Result<(EvalCurve, f64), TrackingError> {
    let errors: Vec<f64> = frames
        .iter()
        .filter_map(|(p, g)| {
            let g = g.as_ref()?;
            Some(p.as_ref().map_or(f64::INFINITY, |p| center_error(p, g)))
        })
        .collect();
    let curve = at_most_curve(&errors, precision_thresholds())?;
    let at = curve
        .score_at(PRECISION_AT_PX)
        .expect("grid contains the reference threshold");
    Ok((curve, at))
}

/// Normalized precision, grid 0..0.5. Frames whose ground truth is absent or
/// cannot normalize (zero diagonal, or a zero side under [`NormMode::PerAxis`])
/// are skipped.
pub fn norm_precision_curve(
    frames: &[FramePair],
    mode: NormMode,
) -> Result<EvalCurve, TrackingError> {
    let mut errors = Vec::with_capacity(frames.len());
    for (p, g) in frames {
        let Some(g) = g else { continue };
        let e = match p {
            Some(p) => match norm_center_error(p, g, mode) {
                Ok(e) => e,
                Err(TrackingError::DegenerateGT) => continue,
                Err(e) => return Err(e),
            },
            None => {
                if norm_center_error(g, g, mode).is_err() {
                    continue;
                }
                f64::INFINITY
            }
        };
        errors.push(e);
    }
    at_most_curve(&errors, norm_precision_thresholds())
}

/// Overlap success: the fraction of frames whose IoU strictly exceeds each
/// threshold. An absent prediction for an absent target scores IoU 1; any
/// other frame with an absent box scores 0. Returns the curve and the success
/// rate at [`SUCCESS_AT_IOU`].
pub fn success_curve(frames: &[FramePair]) -> Result<(EvalCurve, f64), TrackingError> {
    if frames.is_empty() {
        return Err(TrackingError::EmptySequence);
    }
    let overlaps: Vec<f64> = frames
        .iter()
        .map(|pair| match pair {
            (Some(p), Some(g)) => iou(p, g),
            (None, None) => 1.0,
            _ => 0.0,
        })
        .collect();
    let n = overlaps.len() as f64;
    let thresholds = success_thresholds();
    let scores = thresholds
        .iter()
        .map(|t| overlaps.iter().filter(|o| **o > *t).count() as f64 / n)
        .collect();
    let curve = EvalCurve::new(thresholds, scores)?;
    let at = curve
        .score_at(SUCCESS_AT_IOU)
        .expect("grid contains the reference threshold");
    Ok((curve, at))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(x: f64, y: f64, w: f64, h: f64) -> Option<BoundingBox> {
        Some(BoundingBox::new(x, y, w, h).unwrap())
    }

    fn perfect(n: usize) -> Vec<FramePair> {
        (0..n)
            .map(|i| (b(i as f64, 2.0, 10.0, 20.0), b(i as f64, 2.0, 10.0, 20.0)))
            .collect()
    }

    #[test]
    fn perfect_tracker() {
        let f = perfect(7);
        let (p, p20) = precision_curve(&f).unwrap();
        assert!(p.scores.iter().all(|s| *s == 1.0));
        assert_eq!(p20, 1.0);
        let (s, s05) = success_curve(&f).unwrap();
        assert_eq!(s05, 1.0);
        assert!((s.auc - 20.0 / 21.0).abs() < 1e-12);
        assert_eq!(s.scores[20], 0.0);
        assert_eq!(
            norm_precision_curve(&f, NormMode::Diagonal).unwrap().auc,
            1.0
        );
    }

    #[test]
    fn offset_by_25_pixels_is_a_step() {
        let f: Vec<FramePair> = (0..4)
            .map(|_| (b(25.0, 0.0, 10.0, 10.0), b(0.0, 0.0, 10.0, 10.0)))
            .collect();
        let (p, p20) = precision_curve(&f).unwrap();
        assert_eq!(p20, 0.0);
        for (t, s) in p.thresholds.iter().zip(&p.scores) {
            assert_eq!(*s, if *t < 25.0 { 0.0 } else { 1.0 });
        }
    }

    #[test]
    fn two_frame_mixture() {
        let f = vec![
            (b(10.0, 0.0, 4.0, 4.0), b(0.0, 0.0, 4.0, 4.0)),
            (b(0.0, 30.0, 4.0, 4.0), b(0.0, 0.0, 4.0, 4.0)),
        ];
        assert_eq!(precision_curve(&f).unwrap().1, 0.5);
    }

    #[test]
    fn disjoint_predictions_never_succeed() {
        let f: Vec<FramePair> = (0..3)
            .map(|_| (b(50.0, 50.0, 5.0, 5.0), b(0.0, 0.0, 5.0, 5.0)))
            .collect();
        let (s, s05) = success_curve(&f).unwrap();
        assert_eq!(s.auc, 0.0);
        assert_eq!(s05, 0.0);
    }

    #[test]
    fn normalized_quarter_error() {
        // gt 30x40 has diagonal 50, so a 12.5 px horizontal offset is 0.25.
        let f: Vec<FramePair> = (0..5)
            .map(|_| (b(12.5, 0.0, 30.0, 40.0), b(0.0, 0.0, 30.0, 40.0)))
            .collect();
        let c = norm_precision_curve(&f, NormMode::Diagonal).unwrap();
        for (t, s) in c.thresholds.iter().zip(&c.scores) {
            assert_eq!(*s, if *t < 0.25 { 0.0 } else { 1.0 });
        }
        assert!((c.auc - 26.0 / 51.0).abs() < 1e-12);
    }

    #[test]
    fn absent_frames() {
        let f = vec![
            (None, None),
            (b(0.0, 0.0, 1.0, 1.0), None),
            (None, b(0.0, 0.0, 4.0, 4.0)),
            (b(0.0, 0.0, 4.0, 4.0), b(0.0, 0.0, 4.0, 4.0)),
        ];
        let (p, _) = precision_curve(&f).unwrap();
        assert_eq!(p.scores[50], 0.5);
        let (s, _) = success_curve(&f).unwrap();
        assert_eq!(s.scores[0], 0.5);
        let only_absent = vec![(None, None), (b(0.0, 0.0, 1.0, 1.0), None)];
        assert!(matches!(
            precision_curve(&only_absent),
            Err(TrackingError::EmptySequence)
        ));
        assert!(matches!(
            success_curve(&[]),
            Err(TrackingError::EmptySequence)
        ));
        let degenerate = vec![(b(0.0, 0.0, 1.0, 1.0), b(0.0, 0.0, 0.0, 0.0))];
        assert!(matches!(
            norm_precision_curve(&degenerate, NormMode::Diagonal),
            Err(TrackingError::EmptySequence)
        ));
    }

    #[test]
    fn mean_of_curves() {
        let a = EvalCurve::new(vec![0.0, 1.0], vec![0.0, 1.0]).unwrap();
        let c = EvalCurve::new(vec![0.0, 1.0], vec![1.0, 1.0]).unwrap();
        let m = EvalCurve::mean([&a, &c]).unwrap();
        assert_eq!(m.scores, vec![0.5, 1.0]);
        assert_eq!(m.auc, 0.75);
        let other = EvalCurve::new(vec![0.0, 2.0], vec![0.0, 1.0]).unwrap();
        assert!(matches!(
            EvalCurve::mean([&a, &other]),
            Err(TrackingError::GridMismatch)
        ));
        assert!(EvalCurve::new(vec![1.0, 1.0], vec![0.0, 0.0]).is_err());
    }

    fn frames_strategy() -> impl Strategy<Value = Vec<FramePair>> {
        let bx = prop::option::weighted(0.9, (0f64..200.0, 0f64..200.0, 1f64..80.0, 1f64..80.0))
            .prop_map(|o| o.map(|(x, y, w, h)| BoundingBox::new(x, y, w, h).unwrap()));
        prop::collection::vec((bx.clone(), bx), 1..40)
    }

    proptest! {
        #[test]
        fn curves_are_monotone_and_auc_is_mean(frames in frames_strategy()) {
            let mut curves = Vec::new();
            if let Ok((p, _)) = precision_curve(&frames) {
                prop_assert!(p.scores.windows(2).all(|w| w[0] <= w[1]));
                curves.push(p);
            }
            if let Ok(n) = norm_precision_curve(&frames, NormMode::Diagonal) {
                prop_assert!(n.scores.windows(2).all(|w| w[0] <= w[1]));
                curves.push(n);
            }
            let (s, _) = success_curve(&frames).unwrap();
            prop_assert!(s.scores.windows(2).all(|w| w[0] >= w[1]));
            curves.push(s);
            for c in curves {
                prop_assert!(c.scores.iter().all(|v| (0.0..=1.0).contains(v)));
                let mean = c.scores.iter().sum::<f64>() / c.scores.len() as f64;
                prop_assert!((c.auc - mean).abs() <= 1e-12);
            }
        }

        #[test]
        fn normalized_precision_ignores_uniform_scaling(frames in frames_strategy(), k in 0.1f64..10.0) {
            let scaled: Vec<FramePair> = frames
                .iter()
                .map(|(p, g)| (p.map(|p| p.scaled(k)), g.map(|g| g.scaled(k))))
                .collect();
            if let Ok(a) = norm_precision_curve(&frames, NormMode::Diagonal) {
                let c = norm_precision_curve(&scaled, NormMode::Diagonal).unwrap();
                // Errors landing within rounding of a grid point may flip; allow one frame.
                let tol = 1.0 / frames.len() as f64 + 1e-12;
                for (x, y) in a.scores.iter().zip(&c.scores) {
                    prop_assert!((x - y).abs() <= tol);
                }
            }
        }
    }
}
