//! Numeric text formats: CSV and whitespace-separated "amat" files.

use std::path::Path;

use ndarray::Array2;

use super::Dataset;
use crate::error::{Error, Result};

fn format_err(path: &Path, message: String) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        message,
    }
}

/// Maps raw label values to dense indices `0..k` in ascending order of value.
fn dense_labels(raw: &[f64]) -> (Vec<usize>, usize) {
    let mut uniq = raw.to_vec();
    uniq.sort_by(f64::total_cmp);
    uniq.dedup();
    let y = raw
        .iter()
        .map(|v| uniq.binary_search_by(|u| u.total_cmp(v)).expect("value present"))
        .collect();
    (y, uniq.len())
}

fn assemble(rows: Vec<Vec<f64>>, raw_labels: Vec<f64>, path: &Path) -> Result<Dataset> {
    if rows.is_empty() {
        return Err(format_err(path, "no data rows".into()));
    }
    let width = rows[0].len();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let x = Array2::from_shape_vec((raw_labels.len(), width), flat).expect("rectangular rows");
    let (y, classes) = dense_labels(&raw_labels);
    Dataset::new(x, y, classes)
}

/// Parses CSV text. `label_column = None` takes the last column. Rows are numbered from 1,
/// counting the header.
pub fn parse_csv(text: &str, label_column: Option<usize>, has_header: bool, path: &Path) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;
    for (k, record) in reader.records().enumerate() {
        let row_no = k + 1 + usize::from(has_header);
        let record = record.map_err(|e| format_err(path, format!("row {row_no}: {e}")))?;
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return Err(format_err(
                    path,
                    format!("row {row_no}: {} fields, expected {w}", record.len()),
                ));
            }
            _ => {}
        }
        let label_at = label_column.unwrap_or(record.len() - 1);
        if label_at >= record.len() {
            return Err(format_err(path, format!("row {row_no}: no label column {label_at}")));
        }
        let mut features = Vec::with_capacity(record.len() - 1);
        for (c, cell) in record.iter().enumerate() {
            let v: f64 = cell
                .parse()
                .map_err(|_| format_err(path, format!("row {row_no}, column {c}: non-numeric cell {cell:?}")))?;
            if c == label_at {
                labels.push(v);
            } else {
                features.push(v);
            }
        }
        rows.push(features);
    }
    assemble(rows, labels, path)
}

pub fn load_csv(path: impl AsRef<Path>, label_column: Option<usize>, has_header: bool) -> Result<Dataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text, label_column, has_header, path)
}

/// Whitespace-separated floats, one example per line, label last.
pub fn parse_amat(text: &str, path: &Path) -> Result<Dataset> {
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;
    for (k, line) in text.lines().enumerate() {
        let row_no = k + 1;
        let values = line
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| format_err(path, format!("row {row_no}: non-numeric token {t:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if values.is_empty() {
            continue;
        }
        match width {
            None => width = Some(values.len()),
            Some(w) if w != values.len() => {
                return Err(format_err(
                    path,
                    format!("row {row_no}: {} fields, expected {w}", values.len()),
                ));
            }
            _ => {}
        }
        let (label, features) = values.split_last().expect("nonempty");
        labels.push(*label);
        rows.push(features.to_vec());
    }
    assemble(rows, labels, path)
}

pub fn load_amat(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_amat(&text, path)
}
