use std::path::PathBuf;

use thiserror::Error;
use uvot_core::dataset::DatasetError;
use uvot_core::imaging::ImagingError;
use uvot_core::model::ModelError;
use uvot_core::tracking::TrackingError;
use uvot_core::train::TrainError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("method uwie-tr needs --checkpoint")]
    MissingCheckpoint,
    #[error("{0}")]
    UnreadableInput(String),
    #[error("frame {frame}: {source}")]
    Frame {
        frame: String,
        #[source]
        source: ModelError,
    },
    #[error("pair {pair}: {detail}")]
    ShapeMismatch { pair: String, detail: String },
    #[error("pairs manifest {0} lists no pairs")]
    EmptyManifest(PathBuf),
    #[error("tracker {tracker}: no result file for sequence {sequence} ({path})")]
    MissingSequence {
        tracker: String,
        sequence: String,
        path: PathBuf,
    },
    #[error("tracker {tracker}: {source}")]
    Tracker {
        tracker: String,
        #[source]
        source: TrackingError,
    },
    #[error("{path}: {source}")]
    Prediction {
        path: PathBuf,
        #[source]
        source: DatasetError,
    },
    #[error("missing required setting `{0}` (flag or config file)")]
    MissingSetting(&'static str),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Tracking(#[from] TrackingError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

fn model_kind(e: &ModelError) -> &'static str {
    match e {
        ModelError::IndivisibleWindow { .. } => "IndivisibleWindow",
        ModelError::ShapeMismatch(_) => "ShapeMismatch",
        ModelError::InvalidConfig(_) => "InvalidConfig",
        ModelError::Checkpoint(_) => "Checkpoint",
        ModelError::Imaging(_) => "Imaging",
        ModelError::Io(_) => "Io",
    }
}

fn tracking_kind(e: &TrackingError) -> &'static str {
    match e {
        TrackingError::MissingSequence(_) => "MissingSequence",
        TrackingError::FrameCountMismatch { .. } => "FrameCountMismatch",
        TrackingError::InSequence { source, .. } => tracking_kind(source),
        TrackingError::NegativeExtent { .. } => "NegativeExtent",
        TrackingError::DegenerateGT => "DegenerateGT",
        TrackingError::EmptySequence => "EmptySequence",
        TrackingError::GridMismatch => "GridMismatch",
        TrackingError::Csv(_) | TrackingError::Json(_) | TrackingError::Io(_) => "Io",
    }
}

fn dataset_kind(e: &DatasetError) -> &'static str {
    match e {
        DatasetError::MalformedLine { .. } => "MalformedLine",
        DatasetError::NegativeExtent { .. } => "NegativeExtent",
        DatasetError::MalformedVoteRow { .. } => "MalformedVoteRow",
        DatasetError::DuplicateVote { .. } => "DuplicateVote",
        DatasetError::EmptyTable => "EmptyTable",
        DatasetError::UnknownLabel(_) => "UnknownLabel",
        DatasetError::InvalidRatio(_) => "InvalidRatio",
        DatasetError::Manifest(_) | DatasetError::Json(_) => "Manifest",
        _ => "Dataset",
    }
}

impl CliError {
    /// Stable error name printed in front of the message.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::MissingCheckpoint => "MissingCheckpoint",
            CliError::UnreadableInput(_) => "UnreadableInput",
            CliError::Frame { source, .. } | CliError::Model(source) => model_kind(source),
            CliError::ShapeMismatch { .. } => "ShapeMismatch",
            CliError::EmptyManifest(_) => "EmptyManifest",
            CliError::MissingSequence { .. } => "MissingSequence",
            CliError::Tracker { source, .. } | CliError::Tracking(source) => tracking_kind(source),
            CliError::Prediction { source, .. } | CliError::Dataset(source) => dataset_kind(source),
            CliError::MissingSetting(_) | CliError::Config(_) => "Config",
            CliError::Train(TrainError::Model(m)) => model_kind(m),
            CliError::Train(_) => "Train",
            CliError::Imaging(_) => "Imaging",
            CliError::Json(_) => "Json",
            CliError::Io(_) => "Io",
        }
    }
}
