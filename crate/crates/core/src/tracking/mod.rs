//! One-pass evaluation of single-object trackers: per-frame box metrics,
//! precision / success / normalized-precision curves, dataset aggregation and
//! attribute-wise report tables.
//!
//! An absent box (target out of view, or no annotation) is `None` wherever a
//! frame is stored as [`crate::dataset::Annotation`].

mod bbox;
mod curves;
mod ope;
mod report;

pub use bbox::{center_error, iou, norm_center_error, BoundingBox, NormMode};
pub use curves::{
    norm_precision_curve, norm_precision_thresholds, precision_curve, precision_thresholds,
    success_curve, success_thresholds, EvalCurve, FramePair, PRECISION_AT_PX, SUCCESS_AT_IOU,
};
pub use ope::{ope_evaluate, OpeResult, SequenceMetrics};
pub use report::{
    attribute_labels, attribute_report, attribute_table_wide, write_attribute_csv,
    write_attribute_table, write_plot_csv, write_report_json, AttributeRow, AttributeTable,
    TrackerReport,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrackingError {
    #[error("box has negative extent (w = {w}, h = {h})")]
    NegativeExtent { w: f64, h: f64 },
    #[error("ground-truth box has zero diagonal")]
    DegenerateGT,
    #[error("no frame can be scored")]
    EmptySequence,
    #[error("no results for sequence {0}")]
    MissingSequence(String),
    #[error("sequence {sequence}: {expected} ground-truth frames but {found} predictions")]
    FrameCountMismatch {
        sequence: String,
        expected: usize,
        found: usize,
    },
    #[error("sequence {sequence}: {source}")]
    InSequence {
        sequence: String,
        #[source]
        source: Box<TrackingError>,
    },
    #[error("curve grids differ")]
    GridMismatch,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
