//! Python bindings: tensors, per-head features, corpus extraction, metrics
//! and trained models.

use std::path::PathBuf;

use ::attn_topo::attn_graph::graph_features as graph_features_rs;
use ::attn_topo::features::{extract_features as extract_rs, ExtractConfig};
use ::attn_topo::linear_model::{self, GridOptions};
use ::attn_topo::patterns::{pattern_features as pattern_features_rs, PatternKind};
use ::attn_topo::persistence::{attention_filtration_barcode, barcode_features as barcode_features_rs};
use ::attn_topo::tensor_io::{load_manifest, records_in_split, AttentionMap, Split};
use ::attn_topo::attn_graph::GraphFeatureVector;
use ::attn_topo::Error;
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyIndexError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(attn_topo, AttnTopoError, PyException);

fn to_py(e: Error) -> PyErr {
    AttnTopoError::new_err(e.to_string())
}

#[pyclass(name = "AttentionTensor", module = "attn_topo", frozen)]
struct PyTensor {
    inner: ::attn_topo::AttentionTensor,
}

impl PyTensor {
    fn map(&self, layer: usize, head: usize) -> PyResult<AttentionMap<'_>> {
        if layer >= self.inner.layers() || head >= self.inner.heads() {
            return Err(PyIndexError::new_err(format!(
                "head ({layer}, {head}) outside {}x{}",
                self.inner.layers(),
                self.inner.heads()
            )));
        }
        Ok(self.inner.head(layer, head))
    }
}

#[pymethods]
impl PyTensor {
    #[getter]
    fn layers(&self) -> usize {
        self.inner.layers()
    }

    #[getter]
    fn heads(&self) -> usize {
        self.inner.heads()
    }

    #[getter]
    fn num_tokens(&self) -> usize {
        self.inner.num_tokens()
    }

    /// `(text, is_special, is_punct)` per token.
    #[getter]
    fn tokens(&self) -> Vec<(String, bool, bool)> {
        self.inner
            .tokens()
            .iter()
            .map(|t| (t.text.clone(), t.is_special, t.is_punct))
            .collect()
    }

    /// K×K attention rows of one head.
    fn head(&self, layer: usize, head: usize) -> PyResult<Vec<Vec<f32>>> {
        let m = self.map(layer, head)?;
        Ok((0..m.size()).map(|i| m.row(i).to_vec()).collect())
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        ::attn_topo::tensor_io::write_tensor(&self.inner, path).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!(
            "AttentionTensor(layers={}, heads={}, num_tokens={})",
            self.inner.layers(),
            self.inner.heads(),
            self.inner.num_tokens()
        )
    }
}

#[pyfunction]
fn read_tensor(path: PathBuf) -> PyResult<PyTensor> {
    Ok(PyTensor {
        inner: ::attn_topo::tensor_io::read_tensor(path).map_err(to_py)?,
    })
}

fn named<'py>(py: Python<'py>, names: &[&str], values: &[f64]) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    for (n, v) in names.iter().zip(values) {
        d.set_item(*n, *v)?;
    }
    Ok(d)
}

/// Graph features of one head at one threshold.
#[pyfunction]
fn graph_features<'py>(
    py: Python<'py>,
    tensor: &PyTensor,
    layer: usize,
    head: usize,
    threshold: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let f = graph_features_rs(tensor.map(layer, head)?, threshold).map_err(to_py)?;
    named(py, &GraphFeatureVector::NAMES, &f.values())
}

#[pyfunction]
fn barcode_features<'py>(py: Python<'py>, tensor: &PyTensor, layer: usize, head: usize) -> PyResult<Bound<'py, PyDict>> {
    let bc = attention_filtration_barcode(tensor.map(layer, head)?);
    named(
        py,
        &::attn_topo::persistence::BarcodeFeatureVector::NAMES,
        &barcode_features_rs(&bc).values(),
    )
}

#[pyfunction]
fn pattern_features<'py>(py: Python<'py>, tensor: &PyTensor, layer: usize, head: usize) -> PyResult<Bound<'py, PyDict>> {
    let values = pattern_features_rs(tensor.map(layer, head)?, tensor.inner.tokens());
    let names: Vec<&str> = PatternKind::ALL.iter().map(|k| k.name()).collect();
    named(py, &names, &values)
}

#[pyclass(name = "FeatureMatrix", module = "attn_topo", frozen)]
struct PyFeatureMatrix {
    inner: ::attn_topo::FeatureMatrix,
}

#[pymethods]
impl PyFeatureMatrix {
    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        Ok(PyFeatureMatrix {
            inner: ::attn_topo::FeatureMatrix::read(path).map_err(to_py)?,
        })
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        (self.inner.n_rows(), self.inner.n_cols())
    }

    #[getter]
    fn sentence_ids(&self) -> Vec<String> {
        self.inner.sentence_ids.clone()
    }

    #[getter]
    fn feature_ids(&self) -> Vec<String> {
        self.inner.feature_ids.iter().map(ToString::to_string).collect()
    }

    fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.inner.n_rows()).map(|i| self.inner.row(i).to_vec()).collect()
    }

    fn write_csv(&self, path: PathBuf) -> PyResult<()> {
        self.inner.write_csv(path).map_err(to_py)
    }

    fn write_cache(&self, path: PathBuf) -> PyResult<()> {
        self.inner.write_cache(path).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("FeatureMatrix({} x {})", self.inner.n_rows(), self.inner.n_cols())
    }
}

/// Extracts features for the records of `manifest` (optionally one split).
/// Returns the matrix and the labels in row order.
#[pyfunction]
#[pyo3(signature = (manifest, split=None, thresholds=None, novel_features=true))]
fn extract_features(
    py: Python<'_>,
    manifest: PathBuf,
    split: Option<&str>,
    thresholds: Option<Vec<f64>>,
    novel_features: bool,
) -> PyResult<(PyFeatureMatrix, Vec<u8>)> {
    let mut cfg = ExtractConfig {
        novel_features,
        ..ExtractConfig::default()
    };
    if let Some(t) = thresholds {
        cfg.thresholds = t;
    }
    let mut records = load_manifest(manifest).map_err(to_py)?;
    if let Some(s) = split {
        let s: Split = s.parse().map_err(to_py)?;
        records = records_in_split(&records, s);
    }
    let labels = records.iter().map(|r| r.label).collect();
    let fm = py.detach(|| extract_rs(&records, &cfg)).map_err(to_py)?;
    Ok((PyFeatureMatrix { inner: fm }, labels))
}

/// `(accuracy, mcc)`.
#[pyfunction]
fn metrics(y_true: Vec<u8>, y_pred: Vec<u8>) -> PyResult<(f64, f64)> {
    linear_model::metrics(&y_true, &y_pred).map_err(to_py)
}

#[pyclass(name = "TrainedModel", module = "attn_topo", frozen)]
struct PyModel {
    inner: ::attn_topo::TrainedModel,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyModel {
            inner: ::attn_topo::TrainedModel::load(path).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path).map_err(to_py)
    }

    #[getter]
    fn decision_threshold(&self) -> f64 {
        self.inner.decision_threshold
    }

    #[getter]
    fn chosen_c(&self) -> Option<f64> {
        self.inner.chosen_c
    }

    #[getter]
    fn chosen_num_pc(&self) -> usize {
        self.inner.chosen_num_pc
    }

    fn logits(&self, x: &PyFeatureMatrix) -> PyResult<Vec<f64>> {
        self.inner.logits(&x.inner).map_err(to_py)
    }

    /// `(probabilities, labels)`.
    fn predict(&self, x: &PyFeatureMatrix) -> PyResult<(Vec<f64>, Vec<u8>)> {
        self.inner.predict(&x.inner).map_err(to_py)
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(to_py)
    }
}

/// Grid search on `train`, model selection and threshold tuning on `idd`.
#[pyfunction]
#[pyo3(signature = (train, y_train, idd, y_idd, c_grid=None, pc_grid=None))]
fn train(
    py: Python<'_>,
    train: &PyFeatureMatrix,
    y_train: Vec<u8>,
    idd: &PyFeatureMatrix,
    y_idd: Vec<u8>,
    c_grid: Option<Vec<f64>>,
    pc_grid: Option<Vec<usize>>,
) -> PyResult<PyModel> {
    let mut opts = GridOptions::default();
    if let Some(c) = c_grid {
        opts.c_grid = c;
    }
    if let Some(p) = pc_grid {
        opts.pc_grid = p;
    }
    let (model, _) = py
        .detach(|| linear_model::grid_search(&train.inner, &y_train, &idd.inner, &y_idd, &opts))
        .map_err(to_py)?;
    Ok(PyModel { inner: model })
}

#[pymodule]
fn attn_topo(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("AttnTopoError", m.py().get_type::<AttnTopoError>())?;
    m.add_class::<PyTensor>()?;
    m.add_class::<PyFeatureMatrix>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(read_tensor, m)?)?;
    m.add_function(wrap_pyfunction!(graph_features, m)?)?;
    m.add_function(wrap_pyfunction!(barcode_features, m)?)?;
    m.add_function(wrap_pyfunction!(pattern_features, m)?)?;
    m.add_function(wrap_pyfunction!(extract_features, m)?)?;
    m.add_function(wrap_pyfunction!(metrics, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    Ok(())
}
