use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AttributeFlag, DatasetError, SequenceRecord};
use crate::tracking::center_error;

/// Shortest admissible sequence, in frames.
pub const MIN_FRAMES: usize = 40;
/// Longest admissible sequence, in frames.
pub const MAX_FRAMES: usize = 3300;
/// Consecutive-frame center displacement above which motion counts as fast.
pub const FAST_MOTION_PX: f64 = 20.0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    TooShort { frames: usize },
    TooLong { frames: usize },
    OutOfBounds { frame: usize },
    CountMismatch { frames: usize, boxes: usize },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::TooShort { frames } => {
                write!(f, "TooShort ({frames} < {MIN_FRAMES} frames)")
            }
            Violation::TooLong { frames } => write!(f, "TooLong ({frames} > {MAX_FRAMES} frames)"),
            Violation::OutOfBounds { frame } => write!(f, "OutOfBounds (frame {frame})"),
            Violation::CountMismatch { frames, boxes } => {
                write!(f, "CountMismatch ({frames} frames, {boxes} boxes)")
            }
        }
    }
}

/// All rule violations of one record; empty means the record is admissible.
pub fn validate_sequence(rec: &SequenceRecord) -> Vec<Violation> {
    let mut out = Vec::new();
    let frames = rec.frame_count();
    if frames < MIN_FRAMES {
        out.push(Violation::TooShort { frames });
    }
    if frames > MAX_FRAMES {
        out.push(Violation::TooLong { frames });
    }
    if rec.boxes.len() != frames {
        out.push(Violation::CountMismatch {
            frames,
            boxes: rec.boxes.len(),
        });
    }
    for (frame, b) in rec.boxes.iter().enumerate() {
        if let Some(b) = b {
            if b.x < 0.0 || b.y < 0.0 || b.x + b.w > rec.width || b.y + b.h > rec.height {
                out.push(Violation::OutOfBounds { frame });
            }
        }
    }
    out
}

/// Smallest and largest per-frame ratio of box area to frame area.
pub fn compute_rts(rec: &SequenceRecord) -> Result<(f64, f64), DatasetError> {
    let frame_area = rec.width * rec.height;
    let mut range: Option<(f64, f64)> = None;
    for b in rec.boxes.iter().flatten() {
        let r = b.area() / frame_area;
        range = Some(match range {
            None => (r, r),
            Some((lo, hi)) => (lo.min(r), hi.max(r)),
        });
    }
    range.ok_or_else(|| DatasetError::NoPresentBoxes(rec.name.clone()))
}

/// Whether any pair of consecutive present boxes moves its center by more
/// than [`FAST_MOTION_PX`].
pub fn detect_fast_motion(rec: &SequenceRecord) -> Result<bool, DatasetError> {
    let mut pairs = 0;
    for w in rec.boxes.windows(2) {
        if let [Some(a), Some(b)] = w {
            pairs += 1;
            if center_error(a, b) > FAST_MOTION_PX {
                return Ok(true);
            }
        }
    }
    if pairs == 0 {
        return Err(DatasetError::InsufficientFrames(rec.name.clone()));
    }
    Ok(false)
}

/// Fills the computable attributes: the RTS range and the FM flag. Records
/// lacking the boxes needed for a computation keep their ingested values.
pub fn derive_attributes(rec: &mut SequenceRecord) {
    if let Ok((lo, hi)) = compute_rts(rec) {
        rec.attributes.rts_min = Some(lo);
        rec.attributes.rts_max = Some(hi);
    }
    if let Ok(fast) = detect_fast_motion(rec) {
        if fast {
            rec.attributes.flags.insert(AttributeFlag::FastMotion);
        } else {
            rec.attributes.flags.remove(&AttributeFlag::FastMotion);
        }
    }
}

/// One seeded pick from each of `k` contiguous segments of `0..frames`.
/// Segment lengths differ by at most one; the longer ones come first.
pub fn sample_frame_indices(
    frames: usize,
    k: usize,
    seed: u64,
) -> Result<Vec<usize>, DatasetError> {
    if k == 0 || frames < k {
        return Err(DatasetError::TooFewFrames { frames, k });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (base, extra) = (frames / k, frames % k);
    let mut start = 0;
    let mut out = Vec::with_capacity(k);
    for i in 0..k {
        let len = base + usize::from(i < extra);
        out.push(start + rng.random_range(0..len));
        start += len;
    }
    Ok(out)
}

pub fn sample_frames(
    rec: &SequenceRecord,
    k: usize,
    seed: u64,
) -> Result<Vec<usize>, DatasetError> {
    sample_frame_indices(rec.frame_count(), k, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Annotation, AttributeSet, Split, UwvLevel, WcvCategory};
    use crate::tracking::BoundingBox;
    use proptest::prelude::*;

    fn record(frames: usize, boxes: Vec<Annotation>) -> SequenceRecord {
        SequenceRecord {
            name: "s".into(),
            category: "fish".into(),
            frame_paths: (0..frames).map(|i| format!("{i}.jpg")).collect(),
            width: 1000.0,
            height: 1000.0,
            fps: 30.0,
            boxes,
            attributes: AttributeSet::new(UwvLevel::Mid, WcvCategory::Blue),
            split: Split::Unassigned,
        }
    }

    fn bx(x: f64, y: f64, w: f64, h: f64) -> Annotation {
        Some(BoundingBox::new(x, y, w, h).unwrap())
    }

    fn still(frames: usize) -> SequenceRecord {
        record(frames, vec![bx(10.0, 10.0, 100.0, 100.0); frames])
    }

    #[test]
    fn length_bounds() {
        assert_eq!(
            validate_sequence(&still(39)),
            vec![Violation::TooShort { frames: 39 }]
        );
        assert!(validate_sequence(&still(40)).is_empty());
        assert!(validate_sequence(&still(3300)).is_empty());
        assert_eq!(
            validate_sequence(&still(3301)),
            vec![Violation::TooLong { frames: 3301 }]
        );
    }

    #[test]
    fn out_of_bounds_and_count_mismatch() {
        let mut r = still(50);
        r.boxes[7] = bx(950.0, 0.0, 51.0, 10.0);
        r.boxes[9] = bx(-1.0, 0.0, 5.0, 5.0);
        assert_eq!(
            validate_sequence(&r),
            vec![
                Violation::OutOfBounds { frame: 7 },
                Violation::OutOfBounds { frame: 9 }
            ]
        );
        r.boxes.truncate(45);
        r.boxes[7] = None;
        r.boxes[9] = None;
        assert_eq!(
            validate_sequence(&r),
            vec![Violation::CountMismatch {
                frames: 50,
                boxes: 45
            }]
        );
    }

    #[test]
    fn rts_examples() {
        assert_eq!(compute_rts(&still(3)).unwrap(), (0.01, 0.01));
        let r = record(
            2,
            vec![bx(0.0, 0.0, 10.0, 100.0), bx(0.0, 0.0, 750.0, 700.0)],
        );
        let (lo, hi) = compute_rts(&r).unwrap();
        assert!((lo - 0.001).abs() < 1e-15);
        assert!((hi - 0.525).abs() < 1e-12);
        assert!(matches!(
            compute_rts(&record(2, vec![None, None])),
            Err(DatasetError::NoPresentBoxes(_))
        ));
    }

    #[test]
    fn fast_motion_threshold() {
        assert!(!detect_fast_motion(&still(5)).unwrap());
        let jump = |d: f64| record(2, vec![bx(0.0, 0.0, 10.0, 10.0), bx(d, 0.0, 10.0, 10.0)]);
        assert!(!detect_fast_motion(&jump(20.0)).unwrap());
        assert!(detect_fast_motion(&jump(21.0)).unwrap());
        let gap = record(
            3,
            vec![bx(0.0, 0.0, 1.0, 1.0), None, bx(500.0, 0.0, 1.0, 1.0)],
        );
        assert!(matches!(
            detect_fast_motion(&gap),
            Err(DatasetError::InsufficientFrames(_))
        ));
    }

    #[test]
    fn derive_sets_and_clears_fast_motion() {
        let mut r = record(2, vec![bx(0.0, 0.0, 10.0, 10.0), bx(30.0, 0.0, 10.0, 10.0)]);
        derive_attributes(&mut r);
        assert!(r.attributes.has(AttributeFlag::FastMotion));
        let mut s = still(3);
        s.attributes.flags.insert(AttributeFlag::FastMotion);
        derive_attributes(&mut s);
        assert!(!s.attributes.has(AttributeFlag::FastMotion));
    }

    #[test]
    fn sampling_examples() {
        let picks = sample_frame_indices(100, 10, 3).unwrap();
        for (i, p) in picks.iter().enumerate() {
            assert_eq!(p / 10, i);
        }
        assert_eq!(
            sample_frame_indices(10, 10, 9).unwrap(),
            (0..10).collect::<Vec<_>>()
        );
        assert_eq!(
            sample_frame_indices(57, 10, 1).unwrap(),
            sample_frame_indices(57, 10, 1).unwrap()
        );
        assert!(matches!(
            sample_frame_indices(9, 10, 0),
            Err(DatasetError::TooFewFrames { .. })
        ));
    }

    proptest! {
        #[test]
        fn validator_accepts_exactly_the_bounds(frames in 30usize..60, long in 3290usize..3310, oob in any::<bool>()) {
            for n in [frames, long] {
                let mut r = still(n);
                if oob {
                    r.boxes[n / 2] = bx(990.0, 990.0, 20.0, 20.0);
                }
                let ok = (MIN_FRAMES..=MAX_FRAMES).contains(&n) && !oob;
                prop_assert_eq!(validate_sequence(&r).is_empty(), ok);
            }
        }

        #[test]
        fn sampling_hits_every_segment(frames in 1usize..500, k in 1usize..20, seed in any::<u64>()) {
            prop_assume!(frames >= k);
            let picks = sample_frame_indices(frames, k, seed).unwrap();
            prop_assert_eq!(picks.len(), k);
            prop_assert!(picks.windows(2).all(|w| w[0] < w[1]));
            let (base, extra) = (frames / k, frames % k);
            let mut start = 0;
            for (i, p) in picks.iter().enumerate() {
                let len = base + usize::from(i < extra);
                prop_assert!(*p >= start && *p < start + len);
                start += len;
            }
        }
    }
}
