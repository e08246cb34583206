//! Label sidecar files: `{split}.labels.csv` with columns id, label, category.

use std::path::{Path, PathBuf};

use attn_topo::tensor_io::{Category, CorpusRecord};
use attn_topo::{Error, FeatureMatrix, Result};

use crate::commands::io_err;

pub struct Labels {
    pub y: Vec<u8>,
    /// `None` when any sentence lacks a category.
    pub categories: Option<Vec<Category>>,
}

/// `dir/train.csv` or `dir/train.fmb` → `dir/train.labels.csv`.
pub fn sidecar_path(matrix: &Path) -> PathBuf {
    let stem = matrix.file_stem().and_then(|s| s.to_str()).unwrap_or("features");
    matrix.with_file_name(format!("{stem}.labels.csv"))
}

pub fn write(records: &[CorpusRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["id", "label", "category"]).map_err(|e| csv_err(path, e))?;
    for r in records {
        let label = r.label.to_string();
        let cat = r.category.map(|c| c.as_str()).unwrap_or("");
        w.write_record([r.id.as_str(), &label, cat]).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Reads the sidecar and checks it lists the matrix's sentences in order.
pub fn read_for(matrix: &FeatureMatrix, path: &Path) -> Result<Labels> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut y = Vec::new();
    let mut cats = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let id = rec.get(0).unwrap_or_default();
        if matrix.sentence_ids.get(i).map(String::as_str) != Some(id) {
            return Err(Error::HeaderMismatch(format!(
                "{}: row {} is {id:?}, feature matrix has {:?}",
                path.display(),
                i + 1,
                matrix.sentence_ids.get(i)
            )));
        }
        let label = match rec.get(1) {
            Some("0") => 0,
            Some("1") => 1,
            other => return Err(Error::Parse(format!("{id}: bad label {other:?}"))),
        };
        y.push(label);
        cats.push(match rec.get(2) {
            None | Some("") => None,
            Some(c) => Some(c.parse::<Category>()?),
        });
    }
    if y.len() != matrix.n_rows() {
        return Err(Error::LengthMismatch {
            left: matrix.n_rows(),
            right: y.len(),
        });
    }
    let categories = cats.into_iter().collect::<Option<Vec<_>>>();
    Ok(Labels { y, categories })
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Parse(format!("{}: {e}", path.display()))
}
