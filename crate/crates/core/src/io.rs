//! CSV and JSON file handling.
//!
//! Tabular files are subjects × features: a header row `subject_id,<names>`
//! followed by one row per subject. Blocks are held features × subjects in
//! memory, so reading and writing a block transposes. Numbers are written
//! with 17 significant digits so values survive a round trip bit-exactly.
//! Every file is written to a temporary sibling and renamed into place.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::data::MultiBlockData;
use crate::error::{ProjiveError, Result};

/// A matrix exactly as laid out in a CSV file, with its row and column labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledMatrix {
    pub row_ids: Vec<String>,
    pub col_names: Vec<String>,
    /// `row_ids.len() × col_names.len()`
    pub values: DMatrix<f64>,
}

/// A block read from a subjects × features CSV, stored features × subjects.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBlock {
    pub subject_ids: Vec<String>,
    pub feature_names: Vec<String>,
    /// `p × n`
    pub values: DMatrix<f64>,
}

pub fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

fn file_err(path: &Path, message: impl Into<String>) -> ProjiveError {
    ProjiveError::File {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|d| !d.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| file_err(dir, e.to_string()))?;
    let name = path.file_name().ok_or_else(|| file_err(path, "not a file path"))?;
    let tmp: PathBuf = dir.join(format!(".{}.{}.tmp", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp).map_err(|e| file_err(&tmp, e.to_string()))?;
        f.write_all(bytes).map_err(|e| file_err(&tmp, e.to_string()))?;
        f.sync_all().map_err(|e| file_err(&tmp, e.to_string()))?;
    }
    fs::rename(&tmp, path).map_err(|e| file_err(path, e.to_string()))
}

/// Writes `values` with one labelled row per matrix row.
pub fn write_labeled_csv(
    path: &Path,
    corner: &str,
    row_ids: &[String],
    col_names: &[String],
    values: &DMatrix<f64>,
) -> Result<()> {
    if row_ids.len() != values.nrows() || col_names.len() != values.ncols() {
        return Err(ProjiveError::Shape(format!(
            "{}: labels {}×{} do not match matrix {}×{}",
            path.display(),
            row_ids.len(),
            col_names.len(),
            values.nrows(),
            values.ncols()
        )));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(std::iter::once(corner).chain(col_names.iter().map(String::as_str)))?;
    for (i, id) in row_ids.iter().enumerate() {
        let mut rec = Vec::with_capacity(values.ncols() + 1);
        rec.push(id.clone());
        rec.extend(values.row(i).iter().map(|&v| format_value(v)));
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| file_err(path, e.to_string()))?;
    write_atomic(path, &bytes)
}

/// Reads a CSV whose first column holds row identifiers and whose remaining
/// cells are numbers.
pub fn read_labeled_csv(path: &Path) -> Result<LabeledMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| file_err(path, e.to_string()))?;
    let headers = reader.headers().map_err(|e| file_err(path, e.to_string()))?.clone();
    if headers.is_empty() {
        return Err(file_err(path, "empty header"));
    }
    let col_names: Vec<String> = headers.iter().skip(1).map(str::to_owned).collect();
    let mut row_ids = Vec::new();
    let mut data = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| file_err(path, e.to_string()))?;
        if rec.len() != col_names.len() + 1 {
            return Err(file_err(
                path,
                format!(
                    "row {} has {} fields, expected {}",
                    line + 2,
                    rec.len(),
                    col_names.len() + 1
                ),
            ));
        }
        row_ids.push(rec[0].to_owned());
        for (j, cell) in rec.iter().skip(1).enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| {
                file_err(
                    path,
                    format!("row {}, column {:?}: cannot parse {cell:?}", line + 2, col_names[j]),
                )
            })?;
            data.push(v);
        }
    }
    let values = DMatrix::from_row_slice(row_ids.len(), col_names.len(), &data);
    Ok(LabeledMatrix {
        row_ids,
        col_names,
        values,
    })
}

/// Writes a `p × n` block as a subjects × features CSV.
pub fn write_block_csv(
    path: &Path,
    block: &DMatrix<f64>,
    subject_ids: &[String],
    feature_names: &[String],
) -> Result<()> {
    write_labeled_csv(path, "subject_id", subject_ids, feature_names, &block.transpose())
}

pub fn read_block_csv(path: &Path) -> Result<LabeledBlock> {
    let m = read_labeled_csv(path)?;
    Ok(LabeledBlock {
        subject_ids: m.row_ids,
        feature_names: m.col_names,
        values: m.values.transpose(),
    })
}

/// Writes an `n × r` score matrix with columns `<prefix>1, <prefix>2, …`.
pub fn write_scores_csv(path: &Path, scores: &DMatrix<f64>, subject_ids: &[String], prefix: &str) -> Result<()> {
    write_labeled_csv(
        path,
        "subject_id",
        subject_ids,
        &component_names(prefix, scores.ncols()),
        scores,
    )
}

/// Writes a `p × r` loading matrix with one row per feature.
pub fn write_loadings_csv(path: &Path, loadings: &DMatrix<f64>, feature_names: &[String], prefix: &str) -> Result<()> {
    write_labeled_csv(
        path,
        "feature",
        feature_names,
        &component_names(prefix, loadings.ncols()),
        loadings,
    )
}

pub fn component_names(prefix: &str, r: usize) -> Vec<String> {
    (1..=r).map(|c| format!("{prefix}{c}")).collect()
}

/// Reads one block per path and aligns their subjects to the order of the
/// first file. Every file must list exactly the same set of subject ids.
pub fn read_blocks(paths: &[PathBuf]) -> Result<MultiBlockData> {
    if paths.len() < 2 {
        return Err(ProjiveError::InvalidArgument(format!(
            "need at least two block files, got {}",
            paths.len()
        )));
    }
    let mut blocks = Vec::with_capacity(paths.len());
    let mut names = Vec::with_capacity(paths.len());
    let first = read_block_csv(&paths[0])?;
    let ids = first.subject_ids.clone();
    check_unique(&ids, &paths[0])?;
    blocks.push(first.values);
    names.push(first.feature_names);
    for path in &paths[1..] {
        let b = read_block_csv(path)?;
        let order = align_ids(&ids, &b.subject_ids, path)?;
        blocks.push(b.values.select_columns(&order));
        names.push(b.feature_names);
    }
    MultiBlockData::new(blocks)?
        .with_subject_ids(ids)?
        .with_feature_names(names)
}

/// Reads an `n × q` covariate matrix aligned to `subject_ids`.
pub fn read_covariates(path: &Path, subject_ids: &[String]) -> Result<DMatrix<f64>> {
    let m = read_labeled_csv(path)?;
    let order = align_ids(subject_ids, &m.row_ids, path)?;
    Ok(m.values.select_rows(&order))
}

fn check_unique(ids: &[String], path: &Path) -> Result<()> {
    let mut seen = HashMap::with_capacity(ids.len());
    for (i, id) in ids.iter().enumerate() {
        if let Some(prev) = seen.insert(id.as_str(), i) {
            return Err(file_err(
                path,
                format!("subject id {id:?} appears in rows {} and {}", prev + 2, i + 2),
            ));
        }
    }
    Ok(())
}

/// Index into `other` for each id in `reference`.
fn align_ids(reference: &[String], other: &[String], path: &Path) -> Result<Vec<usize>> {
    check_unique(other, path)?;
    if other.len() != reference.len() {
        return Err(file_err(
            path,
            format!("has {} subjects, expected {}", other.len(), reference.len()),
        ));
    }
    let index: HashMap<&str, usize> = other.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    reference
        .iter()
        .map(|id| {
            index
                .get(id.as_str())
                .copied()
                .ok_or_else(|| file_err(path, format!("subject id {id:?} is missing")))
        })
        .collect()
}

/// Writes serde records as a CSV with a header row.
pub fn write_records<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| file_err(path, e.to_string()))?;
    write_atomic(path, &bytes)
}

pub fn read_records<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| file_err(path, e.to_string()))?;
    r.deserialize()
        .map(|rec| rec.map_err(|e| file_err(path, e.to_string())))
        .collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| file_err(path, e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| file_err(path, e.to_string()))
}
