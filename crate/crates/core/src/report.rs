//! Report files: metric tables and matrices as tab-separated values plus a
//! JSON manifest listing them.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::{EvaluationReport, OverlapMatrix, ShiftMatrix};
use crate::session::MetricsSummary;
use crate::themes::ThemeId;

pub const REPORT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("report i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("report table error: {0}")]
    Table(#[from] csv::Error),
    #[error("report encoding error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub name: String,
    pub kind: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportManifest {
    pub format_version: u32,
    pub metrics: MetricsSummary,
    pub files: Vec<ReportFile>,
}

/// What goes into one report directory.
#[derive(Clone, Debug, Default)]
pub struct ReportBundle<'a> {
    pub metrics: Option<&'a MetricsSummary>,
    pub shift: Option<&'a ShiftMatrix>,
    pub overlap: Option<&'a OverlapMatrix>,
    pub evaluation: Option<&'a EvaluationReport>,
    /// Display names used in place of theme ids.
    pub theme_names: BTreeMap<ThemeId, String>,
}

/// Writes a labelled matrix with a blank corner cell.
pub fn write_matrix<W: std::io::Write, V: ToString>(
    out: W,
    row_labels: &[String],
    col_labels: &[String],
    values: &[Vec<V>],
) -> Result<(), ReportError> {
    let mut w = csv::WriterBuilder::new().delimiter(b'\t').from_writer(out);
    w.write_record(std::iter::once(String::new()).chain(col_labels.iter().cloned()))?;
    for (label, row) in row_labels.iter().zip(values) {
        w.write_record(std::iter::once(label.clone()).chain(row.iter().map(ToString::to_string)))?;
    }
    w.flush()?;
    Ok(())
}

fn name_of(names: &BTreeMap<ThemeId, String>, label: &str) -> String {
    names
        .iter()
        .find(|(id, _)| id.to_string() == label)
        .map_or_else(|| label.to_string(), |(_, n)| n.clone())
}

pub fn write_report(dir: &Path, bundle: &ReportBundle<'_>) -> Result<ReportManifest, ReportError> {
    std::fs::create_dir_all(dir)?;
    let names = &bundle.theme_names;
    let rename = |labels: Vec<String>| -> Vec<String> { labels.iter().map(|l| name_of(names, l)).collect() };
    let mut files = Vec::new();
    let mut add = |name: &str, kind: &str, rows: usize, cols: usize| {
        files.push(ReportFile { name: name.into(), kind: kind.into(), rows, cols });
    };

    if let Some(m) = bundle.metrics {
        let rows: Vec<String> = m.purity.iter().map(|p| p.concept.clone()).collect();
        let values: Vec<Vec<f64>> = m.purity.iter().map(|p| vec![p.purity]).collect();
        write_matrix(std::fs::File::create(dir.join("purity.tsv"))?, &rows, &["purity".into()], &values)?;
        add("purity.tsv", "purity", rows.len(), 1);
        if let Some(q) = &m.quartiles {
            let rows = vec!["Q1".into(), "Q2".into(), "Q3".into(), "All".into()];
            let values: Vec<Vec<String>> = (0..4)
                .map(|i| {
                    let t = if i < 3 { q.thresholds[i].to_string() } else { String::new() };
                    vec![t, q.sizes[i].to_string()]
                })
                .collect();
            write_matrix(
                std::fs::File::create(dir.join("quartiles.tsv"))?,
                &rows,
                &["threshold".into(), "size".into()],
                &values,
            )?;
            add("quartiles.tsv", "quartiles", 4, 2);
        }
    }
    if let Some(s) = bundle.shift {
        let labels = rename(s.labels.iter().map(ToString::to_string).collect());
        write_matrix(std::fs::File::create(dir.join("shift.tsv"))?, &labels, &labels, &s.values)?;
        add("shift.tsv", "shift_matrix", labels.len(), labels.len());
    }
    if let Some(o) = bundle.overlap {
        let (rows, cols) = (rename(o.rows.clone()), rename(o.cols.clone()));
        write_matrix(std::fs::File::create(dir.join("overlap.tsv"))?, &rows, &cols, &o.values)?;
        add("overlap.tsv", "overlap_matrix", rows.len(), cols.len());
    }
    if let Some(e) = bundle.evaluation {
        let rows: Vec<String> = e.slices.iter().map(|s| s.slice.to_string()).collect();
        let fmt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
        let values: Vec<Vec<String>> = e
            .slices
            .iter()
            .map(|s| vec![s.support.to_string(), fmt(s.micro_f1), fmt(s.macro_f1)])
            .collect();
        write_matrix(
            std::fs::File::create(dir.join("f1.tsv"))?,
            &rows,
            &["support".into(), "micro_f1".into(), "macro_f1".into()],
            &values,
        )?;
        add("f1.tsv", "slice_f1", rows.len(), 3);
        let rows = rename(e.confusion.rows.iter().map(ToString::to_string).collect());
        let cols = rename(e.confusion.cols.iter().map(ToString::to_string).collect());
        write_matrix(std::fs::File::create(dir.join("confusion.tsv"))?, &rows, &cols, &e.confusion.normalized)?;
        add("confusion.tsv", "confusion_matrix", rows.len(), cols.len());
    }

    let metrics = bundle.metrics.cloned().unwrap_or_else(|| MetricsSummary {
        iteration: 0,
        method: crate::mapper::MappingMethod::NeSy,
        total: 0,
        mapped: 0,
        unmapped: 0,
        coverage: 0.0,
        purity: Vec::new(),
        avg_purity: None,
        quartiles: None,
    });
    let manifest = ReportManifest { format_version: REPORT_FORMAT_VERSION, metrics, files };
    std::fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}
