//! Sequence manifests, box annotations, the dataset suitability rules,
//! computable attributes (fast motion, relative target size), stratified
//! train/test splitting and pseudo-ground-truth majority voting.

mod annotations;
mod manifest;
mod rules;
mod split;
mod voting;

pub use annotations::{
    format_box, parse_annotations, read_annotations, serialize_annotations, write_annotations,
};
pub use manifest::{load_manifest, parse_manifest, Dataset, ManifestAttributes, ManifestSequence};
pub use rules::{
    compute_rts, derive_attributes, detect_fast_motion, sample_frame_indices, sample_frames,
    validate_sequence, Violation, FAST_MOTION_PX, MAX_FRAMES, MIN_FRAMES,
};
pub use split::{split_dataset, split_labels, SplitResult};
pub use voting::{
    parse_vote_csv, vote_all, vote_frame_winners, vote_video_winner, VideoVote, VideoWinner,
    VoteRow, VoteTable, FRAMES_PER_VIDEO,
};

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tracking::BoundingBox;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("line {line}: malformed annotation {content:?}")]
    MalformedLine { line: usize, content: String },
    #[error("line {line}: negative box extent")]
    NegativeExtent { line: usize },
    #[error("sequence {0} has no present boxes")]
    NoPresentBoxes(String),
    #[error("sequence {0} has no pair of consecutive present boxes")]
    InsufficientFrames(String),
    #[error("cannot sample {k} frames from {frames}")]
    TooFewFrames { frames: usize, k: usize },
    #[error("split ratio must lie strictly between 0 and 1, got {0}")]
    InvalidRatio(f64),
    #[error("vote table is empty")]
    EmptyTable,
    #[error("vote row {line}: {reason}")]
    MalformedVoteRow { line: usize, reason: String },
    #[error("expert {expert} voted twice on {video}/{frame}")]
    DuplicateVote {
        video: String,
        frame: String,
        expert: String,
    },
    #[error("unknown attribute label {0:?}")]
    UnknownLabel(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Per-frame annotation; `None` is the absent marker.
pub type Annotation = Option<BoundingBox<f64>>;

macro_rules! label_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $text)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = DatasetError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                let s = s.trim();
                $name::ALL
                    .iter()
                    .copied()
                    .find(|v| v.as_str().eq_ignore_ascii_case(s))
                    .ok_or_else(|| DatasetError::UnknownLabel(s.to_string()))
            }
        }
    };
}

label_enum! {
    /// Binary video-level attributes.
    AttributeFlag {
        SwarmDistractors => "SD",
        Camouflage => "Cam",
        IntraScaleVariation => "ISV",
        RelativeTargetSize => "RTS",
        OutOfView => "OV",
        PartialOcclusion => "PO",
        Deformation => "Def",
        FullOcclusion => "FO",
        LowResolution => "LR",
        FastMotion => "FM",
        MotionBlur => "MB",
        CameraMotion => "CM",
        IlluminationVariation => "IV",
        OutOfPlaneRotation => "OPR",
        PartialTargetInfo => "PTI",
    }
}

label_enum! {
    /// Underwater visibility level.
    UwvLevel {
        Low => "Low",
        Mid => "Mid",
        High => "High",
    }
}

label_enum! {
    /// Water colour category.
    WcvCategory {
        Colorless => "Colorless",
        Ash => "Ash",
        Green => "Green",
        LightBlue => "LightBlue",
        Gray => "Gray",
        LightGreen => "LightGreen",
        DeepBlue => "DeepBlue",
        Dark => "Dark",
        GrayBlue => "GrayBlue",
        PartlyBlue => "PartlyBlue",
        LightYellow => "LightYellow",
        LightBrown => "LightBrown",
        Blue => "Blue",
        Cyan => "Cyan",
        BlueBlack => "BlueBlack",
    }
}

impl UwvLevel {
    /// Report row label, e.g. `UWV-Low`.
    pub fn label(self) -> String {
        format!("UWV-{}", self.as_str())
    }
}

impl WcvCategory {
    /// Report row label, e.g. `WCV-DeepBlue`.
    pub fn label(self) -> String {
        format!("WCV-{}", self.as_str())
    }
}

/// Video-level attribute labels of one sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeSet {
    pub flags: BTreeSet<AttributeFlag>,
    pub uwv: UwvLevel,
    pub wcv: WcvCategory,
    /// Smallest and largest per-frame box-to-frame area ratio, when computable.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rts_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rts_max: Option<f64>,
}

impl AttributeSet {
    pub fn new(uwv: UwvLevel, wcv: WcvCategory) -> Self {
        Self {
            flags: BTreeSet::new(),
            uwv,
            wcv,
            rts_min: None,
            rts_max: None,
        }
    }

    pub fn with_flags(mut self, flags: impl IntoIterator<Item = AttributeFlag>) -> Self {
        self.flags.extend(flags);
        self
    }

    pub fn has(&self, flag: AttributeFlag) -> bool {
        self.flags.contains(&flag)
    }

    /// Every report row label this sequence contributes to.
    pub fn labels(&self) -> Vec<String> {
        let mut out: Vec<String> = self.flags.iter().map(|f| f.as_str().to_string()).collect();
        out.push(self.uwv.label());
        out.push(self.wcv.label());
        out
    }
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    #[default]
    Unassigned,
}

/// One annotated video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceRecord {
    pub name: String,
    pub category: String,
    pub frame_paths: Vec<String>,
    pub width: f64,
    pub height: f64,
    pub fps: f64,
    pub boxes: Vec<Annotation>,
    pub attributes: AttributeSet,
    pub split: Split,
}

/// Frame rate assumed when a manifest omits it.
pub const DEFAULT_FPS: f64 = 30.0;

impl SequenceRecord {
    pub fn frame_count(&self) -> usize {
        self.frame_paths.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_sets_are_complete() {
        assert_eq!(AttributeFlag::ALL.len(), 15);
        assert_eq!(UwvLevel::ALL.len(), 3);
        assert_eq!(WcvCategory::ALL.len(), 15);
        assert_eq!(
            "lightblue".parse::<WcvCategory>().unwrap(),
            WcvCategory::LightBlue
        );
        assert_eq!(
            "FM".parse::<AttributeFlag>().unwrap(),
            AttributeFlag::FastMotion
        );
        assert!("Purple".parse::<WcvCategory>().is_err());
        assert_eq!(UwvLevel::Low.label(), "UWV-Low");
    }

    #[test]
    fn attribute_serde_uses_short_names() {
        let a = AttributeSet::new(UwvLevel::Mid, WcvCategory::DeepBlue)
            .with_flags([AttributeFlag::Camouflage]);
        let json = serde_json::to_string(&a).unwrap();
        assert_eq!(json, r#"{"flags":["Cam"],"uwv":"Mid","wcv":"DeepBlue"}"#);
        let back: AttributeSet = serde_json::from_str(&json).unwrap();
        assert_eq!(back, a);
        assert_eq!(a.labels(), vec!["Cam", "UWV-Mid", "WCV-DeepBlue"]);
    }
}
