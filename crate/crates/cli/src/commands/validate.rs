use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;
use uvot_core::dataset::{load_manifest, split_dataset, validate_sequence, Split, Violation};

use crate::config::{RunContext, ValidateSettings};
use crate::error::CliError;

pub const REPORT_FILE: &str = "validation.json";
pub const SPLIT_FILE: &str = "split.json";

#[derive(Debug, Serialize)]
struct Finding {
    sequence: String,
    message: String,
    #[serde(flatten)]
    violation: Violation,
}

#[derive(Debug, Serialize)]
struct Report {
    dataset: String,
    sequences: usize,
    valid: bool,
    violations: Vec<Finding>,
}

/// Returns whether the dataset is free of violations.
pub fn run(settings: &ValidateSettings, ctx: &RunContext) -> Result<bool, CliError> {
    let dataset = load_manifest(&settings.dataset)?;
    let per_sequence: Vec<Vec<Finding>> = dataset
        .sequences
        .par_iter()
        .map(|rec| {
            validate_sequence(rec)
                .into_iter()
                .map(|violation| Finding {
                    sequence: rec.name.clone(),
                    message: violation.to_string(),
                    violation,
                })
                .collect()
        })
        .collect();
    let violations: Vec<Finding> = per_sequence.into_iter().flatten().collect();
    for f in &violations {
        println!("{}: {}", f.sequence, f.message);
    }
    let report = Report {
        dataset: dataset.name.clone(),
        sequences: dataset.sequences.len(),
        valid: violations.is_empty(),
        violations,
    };
    let text = serde_json::to_string_pretty(&report)?;
    std::fs::write(ctx.out.join(REPORT_FILE), text + "\n")?;

    if let Some(ratio) = settings.split_ratio {
        let split = split_dataset(&dataset.sequences, ratio, ctx.seed)?;
        for w in &split.warnings {
            log::warn!("split: {w}");
        }
        let assignments: &BTreeMap<String, Split> = &split.assignments;
        let text = serde_json::to_string_pretty(assignments)?;
        std::fs::write(ctx.out.join(SPLIT_FILE), text + "\n")?;
    }
    println!(
        "{}",
        serde_json::json!({
            "command": "validate",
            "sequences": report.sequences,
            "violations": report.violations.len(),
        })
    );
    Ok(report.valid)
}
