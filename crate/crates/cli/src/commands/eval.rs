use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use uvot_core::dataset::{load_manifest, read_annotations, Annotation};
use uvot_core::tracking::{
    attribute_report, ope_evaluate, write_attribute_csv, write_attribute_table, write_plot_csv,
    write_report_json, AttributeTable, EvalCurve, TrackerReport,
};

use crate::config::{EvalSettings, RunContext};
use crate::error::CliError;

pub const REPORT_FILE: &str = "report.json";
pub const ATTRIBUTE_CSV: &str = "attributes.csv";
pub const ATTRIBUTE_TABLE: &str = "attribute_table.csv";
pub const PRECISION_PLOT: &str = "precision_plot.csv";
pub const SUCCESS_PLOT: &str = "success_plot.csv";
pub const NORM_PRECISION_PLOT: &str = "norm_precision_plot.csv";

type CurveOf = fn(&TrackerReport) -> &EvalCurve;

fn tracker_name(dir: &Path) -> String {
    let canonical = dir.canonicalize().ok();
    dir.file_name()
        .or_else(|| canonical.as_deref().and_then(Path::file_name))
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string())
}

fn read_results(
    tracker: &str,
    dir: &Path,
    sequences: &[&String],
) -> Result<BTreeMap<String, Vec<Annotation>>, CliError> {
    let loaded: Vec<Result<(String, Vec<Annotation>), CliError>> = sequences
        .par_iter()
        .map(|name| {
            let path: PathBuf = dir.join(format!("{name}.txt"));
            if !path.is_file() {
                return Err(CliError::MissingSequence {
                    tracker: tracker.to_string(),
                    sequence: name.to_string(),
                    path,
                });
            }
            let boxes =
                read_annotations(&path).map_err(|source| CliError::Prediction { path, source })?;
            Ok((name.to_string(), boxes))
        })
        .collect();
    loaded.into_iter().collect()
}

pub fn run(settings: &EvalSettings, ctx: &RunContext) -> Result<(), CliError> {
    let dataset = load_manifest(&settings.dataset)?;
    let ground_truth: BTreeMap<String, Vec<Annotation>> = dataset
        .sequences
        .iter()
        .filter(|s| settings.split.admits(s.split))
        .map(|s| (s.name.clone(), s.boxes.clone()))
        .collect();
    if ground_truth.is_empty() {
        return Err(CliError::Config(format!(
            "no sequences of {} fall in split {:?}",
            settings.dataset.display(),
            settings.split
        )));
    }
    let attributes = dataset.attributes();
    let names: Vec<&String> = ground_truth.keys().collect();

    let mut seen = BTreeSet::new();
    let mut reports = Vec::with_capacity(settings.results.len());
    let mut tables: Vec<AttributeTable> = Vec::with_capacity(settings.results.len());
    for dir in &settings.results {
        let tracker = tracker_name(dir);
        if !seen.insert(tracker.clone()) {
            return Err(CliError::Config(format!(
                "tracker name {tracker} appears twice"
            )));
        }
        let results = read_results(&tracker, dir, &names)?;
        let ope =
            ope_evaluate(&ground_truth, &results, settings.norm_mode.into()).map_err(|source| {
                CliError::Tracker {
                    tracker: tracker.clone(),
                    source,
                }
            })?;
        let table = attribute_report(&tracker, &attributes, &ope);
        tables.push(table.clone());
        reports.push(TrackerReport::new(ope, table));
    }

    write_report_json(&ctx.out.join(REPORT_FILE), &reports)?;
    write_attribute_csv(&ctx.out.join(ATTRIBUTE_CSV), &tables)?;
    write_attribute_table(&ctx.out.join(ATTRIBUTE_TABLE), &tables)?;
    let plots: [(&str, CurveOf); 3] = [
        (PRECISION_PLOT, |r| &r.overall.precision),
        (SUCCESS_PLOT, |r| &r.overall.success),
        (NORM_PRECISION_PLOT, |r| &r.overall.norm_precision),
    ];
    for (file, curve) in plots {
        let curves: Vec<(&str, &EvalCurve)> = reports
            .iter()
            .map(|r| (r.tracker.as_str(), curve(r)))
            .collect();
        write_plot_csv(&ctx.out.join(file), &curves)?;
    }

    for r in &reports {
        println!(
            "{}",
            serde_json::json!({
                "tracker": r.tracker,
                "sequences": r.sequences.len(),
                "pr": r.overall.pr,
                "sr": r.overall.sr,
                "npr": r.overall.npr,
            })
        );
    }
    Ok(())
}
