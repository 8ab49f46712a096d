use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EvalCurve, OpeResult, SequenceMetrics, TrackingError};
use crate::dataset::{AttributeFlag, AttributeSet, UwvLevel, WcvCategory};

/// Every attribute row in report order: binary flags, visibility levels,
/// then water colours.
pub fn attribute_labels() -> Vec<String> {
    AttributeFlag::ALL
        .iter()
        .map(|f| f.as_str().to_string())
        .chain(UwvLevel::ALL.iter().map(|u| u.label()))
        .chain(WcvCategory::ALL.iter().map(|w| w.label()))
        .collect()
}

/// Mean rates over the sequences carrying one attribute label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeRow {
    pub attribute: String,
    pub count: usize,
    pub pr: Option<f64>,
    pub sr: Option<f64>,
    pub npr: Option<f64>,
}

impl AttributeRow {
    /// `UWV-Low (42)`.
    pub fn display_label(&self) -> String {
        format!("{} ({})", self.attribute, self.count)
    }

    /// `0.486|0.443|0.511`, or `-|-|-` for an empty group.
    pub fn cell(&self) -> String {
        let f = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"));
        format!("{}|{}|{}", f(self.pr), f(self.sr), f(self.npr))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeTable {
    pub tracker: String,
    pub rows: Vec<AttributeRow>,
}

/// Groups the evaluated sequences by attribute label. Sequences without an
/// attribute entry contribute to no row.
pub fn attribute_report(
    tracker: &str,
    attributes: &BTreeMap<String, AttributeSet>,
    ope: &OpeResult,
) -> AttributeTable {
    let mut groups: BTreeMap<String, Vec<&SequenceMetrics>> = BTreeMap::new();
    for (name, metrics) in &ope.sequences {
        if let Some(attrs) = attributes.get(name) {
            for label in attrs.labels() {
                groups.entry(label).or_default().push(metrics);
            }
        }
    }
    let rows = attribute_labels()
        .into_iter()
        .map(|attribute| {
            let members = groups.get(&attribute).map(Vec::as_slice).unwrap_or(&[]);
            let count = members.len();
            let mean = |f: fn(&SequenceMetrics) -> f64| {
                (count > 0).then(|| members.iter().map(|m| f(m)).sum::<f64>() / count as f64)
            };
            AttributeRow {
                count,
                pr: mean(|m| m.pr),
                sr: mean(|m| m.sr),
                npr: mean(|m| m.npr),
                attribute,
            }
        })
        .collect();
    AttributeTable {
        tracker: tracker.to_string(),
        rows,
    }
}

/// Full evaluation record of one tracker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackerReport {
    pub tracker: String,
    pub overall: SequenceMetrics,
    pub sequences: BTreeMap<String, SequenceMetrics>,
    pub attributes: Vec<AttributeRow>,
}

impl TrackerReport {
    pub fn new(ope: OpeResult, table: AttributeTable) -> Self {
        Self {
            tracker: table.tracker,
            overall: ope.overall,
            sequences: ope.sequences,
            attributes: table.rows,
        }
    }
}

pub fn write_report_json(path: &Path, reports: &[TrackerReport]) -> Result<(), TrackingError> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer_pretty(file, reports)?;
    Ok(())
}

/// Long form: one line per tracker and attribute. Empty groups leave the
/// metric cells blank.
pub fn write_attribute_csv(path: &Path, tables: &[AttributeTable]) -> Result<(), TrackingError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["tracker", "attribute", "count", "pr", "sr", "npr"])?;
    let f = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for t in tables {
        for r in &t.rows {
            w.write_record([
                t.tracker.clone(),
                r.attribute.clone(),
                r.count.to_string(),
                f(r.pr),
                f(r.sr),
                f(r.npr),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Wide form: attribute rows (with sequence counts) against tracker columns,
/// each cell `PR|SR|NPR`.
pub fn attribute_table_wide(tables: &[AttributeTable]) -> Result<String, TrackingError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["attribute".to_string()];
    header.extend(tables.iter().map(|t| t.tracker.clone()));
    w.write_record(&header)?;
    if let Some(first) = tables.first() {
        for (i, row) in first.rows.iter().enumerate() {
            let mut line = vec![row.display_label()];
            line.extend(tables.iter().map(|t| t.rows[i].cell()));
            w.write_record(&line)?;
        }
    }
    let bytes = w
        .into_inner()
        .map_err(|e| TrackingError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_attribute_table(path: &Path, tables: &[AttributeTable]) -> Result<(), TrackingError> {
    std::fs::write(path, attribute_table_wide(tables)?)?;
    Ok(())
}

/// Plot data, one line per tracker and threshold.
pub fn write_plot_csv(path: &Path, curves: &[(&str, &EvalCurve)]) -> Result<(), TrackingError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["tracker", "threshold", "score"])?;
    for (tracker, c) in curves {
        for (t, s) in c.thresholds.iter().zip(&c.scores) {
            w.write_record([tracker.to_string(), t.to_string(), s.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}
