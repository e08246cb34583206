//! Feature extraction over sentences × layers × heads × thresholds, and the
//! dense feature matrix with its CSV / binary encodings.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attn_graph::{build_graph, GraphFeatureVector, DEFAULT_CYCLE_CAP};
use crate::error::{Error, Result};
use crate::patterns::{pattern_features, PatternKind};
use crate::persistence::{attention_filtration_barcode, barcode_features, BarcodeFeatureVector};
use crate::tensor_io::{AttentionTensor, CorpusRecord};

pub const DEFAULT_THRESHOLDS: [f64; 6] = [0.025, 0.05, 0.1, 0.25, 0.5, 0.75];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureFamily {
    Graph,
    Barcode,
    Pattern,
}

impl FeatureFamily {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureFamily::Graph => "graph",
            FeatureFamily::Barcode => "barcode",
            FeatureFamily::Pattern => "pattern",
        }
    }

    fn known_names(self) -> Vec<&'static str> {
        match self {
            FeatureFamily::Graph => GraphFeatureVector::NAMES.to_vec(),
            FeatureFamily::Barcode => BarcodeFeatureVector::NAMES.to_vec(),
            FeatureFamily::Pattern => PatternKind::ALL.iter().map(|p| p.name()).collect(),
        }
    }
}

impl FromStr for FeatureFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "graph" => Ok(FeatureFamily::Graph),
            "barcode" => Ok(FeatureFamily::Barcode),
            "pattern" => Ok(FeatureFamily::Pattern),
            _ => Err(Error::HeaderMismatch(format!("unknown feature family {s:?}"))),
        }
    }
}

/// Address of one feature column, rendered as `L{layer}.H{head}.{family}.{name}[@thr]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureId {
    pub layer: usize,
    pub head: usize,
    pub family: FeatureFamily,
    pub name: String,
    /// Present exactly for the graph family.
    pub threshold: Option<f64>,
}

impl FeatureId {
    pub fn head_key(&self) -> (usize, usize) {
        (self.layer, self.head)
    }
}

impl fmt::Display for FeatureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "L{}.H{}.{}.{}",
            self.layer,
            self.head,
            self.family.as_str(),
            self.name
        )?;
        if let Some(t) = self.threshold {
            write!(f, "@{t}")?;
        }
        Ok(())
    }
}

impl FromStr for FeatureId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::HeaderMismatch(format!("malformed feature id {s:?}"));
        let mut parts = s.splitn(4, '.');
        let layer = parts
            .next()
            .and_then(|p| p.strip_prefix('L'))
            .and_then(|p| p.parse().ok())
            .ok_or_else(bad)?;
        let head = parts
            .next()
            .and_then(|p| p.strip_prefix('H'))
            .and_then(|p| p.parse().ok())
            .ok_or_else(bad)?;
        let family: FeatureFamily = parts.next().ok_or_else(bad)?.parse()?;
        let rest = parts.next().ok_or_else(bad)?;
        let (name, threshold) = match rest.split_once('@') {
            Some((n, t)) => (n, Some(t.parse::<f64>().map_err(|_| bad())?)),
            None => (rest, None),
        };
        if threshold.is_some() != (family == FeatureFamily::Graph) {
            return Err(bad());
        }
        if !family.known_names().contains(&name) {
            return Err(Error::HeaderMismatch(format!(
                "unknown {} feature {name:?}",
                family.as_str()
            )));
        }
        let id = FeatureId {
            layer,
            head,
            family,
            name: name.to_owned(),
            threshold,
        };
        // reject non-canonical spellings such as "0.10" or "L01"
        if id.to_string() != s {
            return Err(bad());
        }
        Ok(id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractConfig {
    pub thresholds: Vec<f64>,
    /// Include `matching_number` and `chordal` graph features.
    pub novel_features: bool,
    pub cycle_cap: usize,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        ExtractConfig {
            thresholds: DEFAULT_THRESHOLDS.to_vec(),
            novel_features: true,
            cycle_cap: DEFAULT_CYCLE_CAP,
        }
    }
}

impl ExtractConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thresholds.is_empty() {
            return Err(Error::InvalidConfig("threshold list is empty".into()));
        }
        for &t in &self.thresholds {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::InvalidThreshold(t));
            }
        }
        if self.thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig(
                "thresholds must be strictly increasing".into(),
            ));
        }
        if self.cycle_cap == 0 {
            return Err(Error::InvalidConfig("cycle cap must be positive".into()));
        }
        Ok(())
    }

    fn graph_names(&self) -> Vec<&'static str> {
        GraphFeatureVector::NAMES
            .into_iter()
            .filter(|n| self.novel_features || !GraphFeatureVector::NOVEL.contains(n))
            .collect()
    }

    /// Column registry in (layer, head, family, name, threshold) order.
    pub fn layout(&self, layers: usize, heads: usize) -> Vec<FeatureId> {
        let graph = self.graph_names();
        let mut ids = Vec::with_capacity(layers * heads * (graph.len() * self.thresholds.len() + 16));
        for layer in 0..layers {
            for head in 0..heads {
                let id = |family, name: &str, threshold| FeatureId {
                    layer,
                    head,
                    family,
                    name: name.to_owned(),
                    threshold,
                };
                for name in &graph {
                    for &t in &self.thresholds {
                        ids.push(id(FeatureFamily::Graph, name, Some(t)));
                    }
                }
                for name in BarcodeFeatureVector::NAMES {
                    ids.push(id(FeatureFamily::Barcode, name, None));
                }
                for kind in PatternKind::ALL {
                    ids.push(id(FeatureFamily::Pattern, kind.name(), None));
                }
            }
        }
        ids
    }
}

fn check_graph_invariants(f: &GraphFeatureVector, g_nodes: usize, und_edges: usize) -> Result<()> {
    if f.betti1 + g_nodes != und_edges + f.betti0 {
        return Err(Error::Invariant(format!(
            "betti1 {} != |E| {} - V {} + betti0 {}",
            f.betti1, und_edges, g_nodes, f.betti0
        )));
    }
    if f.matching_number > g_nodes / 2 {
        return Err(Error::Invariant("matching larger than V/2".into()));
    }
    if f.betti1 == 0 && !f.chordal {
        return Err(Error::Invariant("forest reported non-chordal".into()));
    }
    Ok(())
}

/// One feature row for a single sentence, in [`ExtractConfig::layout`] order.
pub fn extract_sentence(tensor: &AttentionTensor, config: &ExtractConfig) -> Result<Vec<f64>> {
    let graph_names = config.graph_names();
    let keep: Vec<usize> = GraphFeatureVector::NAMES
        .iter()
        .enumerate()
        .filter(|(_, n)| graph_names.contains(n))
        .map(|(i, _)| i)
        .collect();
    let nt = config.thresholds.len();
    let per_head = keep.len() * nt + 16;
    let mut row = Vec::with_capacity(tensor.layers() * tensor.heads() * per_head);
    let mut graph_block = vec![0.0; keep.len() * nt];
    for layer in 0..tensor.layers() {
        for head in 0..tensor.heads() {
            let w = tensor.head(layer, head);
            for (ti, &thr) in config.thresholds.iter().enumerate() {
                let g = build_graph(w, thr)?;
                let f = GraphFeatureVector::of_graph(&g, config.cycle_cap);
                check_graph_invariants(&f, g.node_count(), g.undirected_edge_count())?;
                let vals = f.values();
                for (ni, &fi) in keep.iter().enumerate() {
                    graph_block[ni * nt + ti] = vals[fi];
                }
            }
            row.extend_from_slice(&graph_block);
            let bc = attention_filtration_barcode(w);
            row.extend(barcode_features(&bc).values());
            row.extend(pattern_features(w, tensor.tokens()));
        }
    }
    if let Some(v) = row.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("feature value {v}")));
    }
    Ok(row)
}

/// Extracts features for already-loaded tensors. Rows follow `ids` order.
pub fn extract_from_tensors(
    ids: &[String],
    tensors: &[AttentionTensor],
    config: &ExtractConfig,
) -> Result<FeatureMatrix> {
    config.validate()?;
    if tensors.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    assert_eq!(ids.len(), tensors.len());
    let shape = (tensors[0].layers(), tensors[0].heads());
    for (id, t) in ids.iter().zip(tensors) {
        if (t.layers(), t.heads()) != shape {
            return Err(Error::MixedTensorShapes(format!(
                "{id:?} has L={} H={}, expected L={} H={}",
                t.layers(),
                t.heads(),
                shape.0,
                shape.1
            )));
        }
    }
    let rows: Vec<Vec<f64>> = tensors
        .par_iter()
        .map(|t| extract_sentence(t, config))
        .collect::<Result<_>>()?;
    Ok(FeatureMatrix::from_rows(
        ids.to_vec(),
        config.layout(shape.0, shape.1),
        rows,
    ))
}

/// Streams tensors from disk sentence by sentence; only feature rows are kept.
pub fn extract_features(records: &[CorpusRecord], config: &ExtractConfig) -> Result<FeatureMatrix> {
    config.validate()?;
    let first = records.first().ok_or(Error::EmptyCorpus)?;
    let t0 = first.load_tensor()?;
    let shape = (t0.layers(), t0.heads());
    drop(t0);
    let rows: Vec<Vec<f64>> = records
        .par_iter()
        .map(|r| {
            let t = r.load_tensor()?;
            if (t.layers(), t.heads()) != shape {
                return Err(Error::MixedTensorShapes(format!(
                    "{:?} has L={} H={}, expected L={} H={}",
                    r.id,
                    t.layers(),
                    t.heads(),
                    shape.0,
                    shape.1
                )));
            }
            extract_sentence(&t, config).map_err(|e| Error::Record {
                id: r.id.clone(),
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;
    Ok(FeatureMatrix::from_rows(
        records.iter().map(|r| r.id.clone()).collect(),
        config.layout(shape.0, shape.1),
        rows,
    ))
}

/// Dense sentences × features matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub sentence_ids: Vec<String>,
    pub feature_ids: Vec<FeatureId>,
    values: Vec<f64>,
}

const CACHE_MAGIC: [u8; 4] = *b"FMTX";
const CACHE_VERSION: u16 = 1;
const ID_COLUMN: &str = "sentence_id";

impl FeatureMatrix {
    pub fn new(sentence_ids: Vec<String>, feature_ids: Vec<FeatureId>, values: Vec<f64>) -> Result<Self> {
        if values.len() != sentence_ids.len() * feature_ids.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {}x{} matrix",
                values.len(),
                sentence_ids.len(),
                feature_ids.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("feature value {v}")));
        }
        Ok(FeatureMatrix {
            sentence_ids,
            feature_ids,
            values,
        })
    }

    fn from_rows(sentence_ids: Vec<String>, feature_ids: Vec<FeatureId>, rows: Vec<Vec<f64>>) -> Self {
        let values: Vec<f64> = rows.into_iter().flatten().collect();
        debug_assert_eq!(values.len(), sentence_ids.len() * feature_ids.len());
        FeatureMatrix {
            sentence_ids,
            feature_ids,
            values,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.sentence_ids.len()
    }

    pub fn n_cols(&self) -> usize {
        self.feature_ids.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.n_cols() + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let n = self.n_cols();
        &self.values[row * n..(row + 1) * n]
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.n_rows()).map(|r| self.get(r, col)).collect()
    }

    /// Submatrix with the given row indices, in that order.
    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            sentence_ids: rows.iter().map(|&r| self.sentence_ids[r].clone()).collect(),
            feature_ids: self.feature_ids.clone(),
            values: rows.iter().flat_map(|&r| self.row(r).iter().copied()).collect(),
        }
    }

    /// Applies `f(column_index, value)` to every entry.
    pub fn map_columns(&self, f: impl Fn(usize, f64) -> f64) -> FeatureMatrix {
        let n = self.n_cols();
        FeatureMatrix {
            sentence_ids: self.sentence_ids.clone(),
            feature_ids: self.feature_ids.clone(),
            values: self
                .values
                .iter()
                .enumerate()
                .map(|(i, &v)| f(i % n, v))
                .collect(),
        }
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        let mut header = vec![ID_COLUMN.to_owned()];
        header.extend(self.feature_ids.iter().map(ToString::to_string));
        w.write_record(&header).map_err(|e| csv_err(path, e))?;
        for r in 0..self.n_rows() {
            let mut rec = vec![self.sentence_ids[r].clone()];
            rec.extend(self.row(r).iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut r = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|e| csv_err(path, e))?;
        let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
        if header.get(0) != Some(ID_COLUMN) {
            return Err(Error::HeaderMismatch(format!(
                "first column must be {ID_COLUMN:?}"
            )));
        }
        let feature_ids: Vec<FeatureId> = header.iter().skip(1).map(str::parse).collect::<Result<_>>()?;
        let mut sentence_ids = Vec::new();
        let mut values = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| csv_err(path, e))?;
            if rec.len() != feature_ids.len() + 1 {
                return Err(Error::Parse(format!(
                    "row {} has {} fields, expected {}",
                    sentence_ids.len() + 1,
                    rec.len(),
                    feature_ids.len() + 1
                )));
            }
            sentence_ids.push(rec[0].to_owned());
            for field in rec.iter().skip(1) {
                values.push(
                    field
                        .parse::<f64>()
                        .map_err(|_| Error::Parse(format!("bad number {field:?}")))?,
                );
            }
        }
        FeatureMatrix::new(sentence_ids, feature_ids, values)
    }

    /// Binary cache with the same logical content as the CSV.
    pub fn to_cache_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&CACHE_MAGIC);
        out.extend_from_slice(&CACHE_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.n_rows() as u32).to_le_bytes());
        out.extend_from_slice(&(self.n_cols() as u32).to_le_bytes());
        let put_str = |s: &str, out: &mut Vec<u8>| {
            out.extend_from_slice(&(s.len() as u32).to_le_bytes());
            out.extend_from_slice(s.as_bytes());
        };
        for s in &self.sentence_ids {
            put_str(s, &mut out);
        }
        for f in &self.feature_ids {
            put_str(&f.to_string(), &mut out);
        }
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_cache_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            if bytes.len() - pos < n {
                return Err(Error::TruncatedFile("feature cache".into()));
            }
            pos += n;
            Ok(&bytes[pos - n..pos])
        };
        if take(4)? != CACHE_MAGIC {
            return Err(Error::Parse("not a feature cache".into()));
        }
        let version = u16::from_le_bytes(take(2)?.try_into().unwrap());
        if version != CACHE_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let rows = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let mut strings = Vec::with_capacity(rows + cols);
        for _ in 0..rows + cols {
            let len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
            let s = std::str::from_utf8(take(len)?)
                .map_err(|e| Error::Parse(e.to_string()))?
                .to_owned();
            strings.push(s);
        }
        let feature_ids = strings
            .split_off(rows)
            .iter()
            .map(|s| s.parse())
            .collect::<Result<Vec<FeatureId>>>()?;
        let payload = take(rows * cols * 8)?;
        let values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if pos != bytes.len() {
            return Err(Error::Parse("trailing bytes in feature cache".into()));
        }
        FeatureMatrix::new(strings, feature_ids, values)
    }

    pub fn write_cache(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_cache_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read_cache(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        FeatureMatrix::from_cache_bytes(&bytes)
    }

    /// Reads `.fmb` caches in binary form and anything else as CSV.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if path.extension().is_some_and(|e| e == "fmb") {
            Self::read_cache(path)
        } else {
            Self::read_csv(path)
        }
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        }
    } else {
        Error::Parse(format!("{}: {e}", path.display()))
    }
}
