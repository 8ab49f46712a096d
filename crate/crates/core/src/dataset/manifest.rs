//! Dataset manifest: a single JSON document listing every sequence.
//!
//! ```json
//! {
//!   "name": "uvot-mini",
//!   "sequences": [
//!     {
//!       "name": "turtle-1",
//!       "category": "turtle",
//!       "width": 1280, "height": 720, "fps": 30,
//!       "frame_count": 120,
//!       "annotation": "anno/turtle-1.txt",
//!       "attributes": { "flags": ["PO", "CM"], "uwv": "Low", "wcv": "Blue" },
//!       "split": "test"
//!     }
//!   ]
//! }
//! ```
//!
//! Frames are given either as an explicit `frames` list or as `frame_count`
//! (paths then default to `<name>/img/00000001.jpg`, ...). Boxes are given
//! inline as `boxes` (`[x, y, w, h]` or `null`) or as an `annotation` file
//! path relative to the manifest.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::rules::derive_attributes;
use super::{
    parse_annotations, Annotation, AttributeFlag, AttributeSet, DatasetError, SequenceRecord,
    Split, UwvLevel, WcvCategory, DEFAULT_FPS,
};
use crate::tracking::BoundingBox;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestAttributes {
    #[serde(default)]
    pub flags: Vec<AttributeFlag>,
    pub uwv: UwvLevel,
    pub wcv: WcvCategory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestSequence {
    pub name: String,
    #[serde(default)]
    pub category: String,
    pub width: f64,
    pub height: f64,
    #[serde(default)]
    pub fps: Option<f64>,
    #[serde(default)]
    pub frames: Option<Vec<String>>,
    #[serde(default)]
    pub frame_count: Option<usize>,
    #[serde(default)]
    pub boxes: Option<Vec<Option<[f64; 4]>>>,
    #[serde(default)]
    pub annotation: Option<String>,
    pub attributes: ManifestAttributes,
    #[serde(default)]
    pub split: Split,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestDoc {
    #[serde(default)]
    name: String,
    sequences: Vec<ManifestSequence>,
}

/// A loaded manifest, sequences kept in document order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub sequences: Vec<SequenceRecord>,
}

impl Dataset {
    pub fn get(&self, name: &str) -> Option<&SequenceRecord> {
        self.sequences.iter().find(|s| s.name == name)
    }

    /// Ground-truth boxes keyed by sequence name.
    pub fn ground_truth(&self) -> BTreeMap<String, Vec<Annotation>> {
        self.sequences
            .iter()
            .map(|s| (s.name.clone(), s.boxes.clone()))
            .collect()
    }

    pub fn attributes(&self) -> BTreeMap<String, AttributeSet> {
        self.sequences
            .iter()
            .map(|s| (s.name.clone(), s.attributes.clone()))
            .collect()
    }
}

fn record_from(seq: ManifestSequence, base: Option<&Path>) -> Result<SequenceRecord, DatasetError> {
    let name = seq.name;
    let manifest_err = |msg: String| DatasetError::Manifest(format!("{name}: {msg}"));
    let boxes: Vec<Annotation> = match (seq.boxes, seq.annotation) {
        (Some(_), Some(_)) => {
            return Err(manifest_err("both `boxes` and `annotation` given".into()))
        }
        (Some(inline), None) => inline
            .into_iter()
            .enumerate()
            .map(|(i, b)| match b {
                None => Ok(None),
                Some([x, y, w, h]) => BoundingBox::new(x, y, w, h)
                    .map(Some)
                    .map_err(|_| DatasetError::NegativeExtent { line: i + 1 }),
            })
            .collect::<Result<_, _>>()?,
        (None, Some(path)) => {
            let full = match base {
                Some(b) => b.join(&path),
                None => path.into(),
            };
            let text = std::fs::read_to_string(&full)
                .map_err(|e| manifest_err(format!("annotation {}: {e}", full.display())))?;
            parse_annotations(&text)?
        }
        (None, None) => return Err(manifest_err("needs `boxes` or `annotation`".into())),
    };
    let frame_paths = match (seq.frames, seq.frame_count) {
        (Some(f), None) => f,
        (Some(f), Some(n)) if f.len() == n => f,
        (Some(f), Some(n)) => {
            return Err(manifest_err(format!(
                "{} frames listed but frame_count {n}",
                f.len()
            )));
        }
        (None, Some(n)) => (1..=n).map(|i| format!("{name}/img/{i:08}.jpg")).collect(),
        (None, None) => (1..=boxes.len())
            .map(|i| format!("{name}/img/{i:08}.jpg"))
            .collect(),
    };
    let mut attributes = AttributeSet::new(seq.attributes.uwv, seq.attributes.wcv);
    attributes.flags.extend(seq.attributes.flags);
    let mut rec = SequenceRecord {
        category: seq.category,
        frame_paths,
        width: seq.width,
        height: seq.height,
        fps: seq.fps.unwrap_or(DEFAULT_FPS),
        boxes,
        attributes,
        split: seq.split,
        name,
    };
    derive_attributes(&mut rec);
    Ok(rec)
}

/// Parses a manifest body; annotation paths resolve against `base`.
pub fn parse_manifest(text: &str, base: Option<&Path>) -> Result<Dataset, DatasetError> {
    let doc: ManifestDoc = serde_json::from_str(text)?;
    let mut seen = std::collections::BTreeSet::new();
    let mut sequences = Vec::with_capacity(doc.sequences.len());
    for seq in doc.sequences {
        if !seen.insert(seq.name.clone()) {
            return Err(DatasetError::Manifest(format!(
                "duplicate sequence {}",
                seq.name
            )));
        }
        sequences.push(record_from(seq, base)?);
    }
    Ok(Dataset {
        name: doc.name,
        sequences,
    })
}

pub fn load_manifest(path: &Path) -> Result<Dataset, DatasetError> {
    let text = std::fs::read_to_string(path)?;
    parse_manifest(&text, path.parent())
}
