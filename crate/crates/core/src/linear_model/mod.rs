//! Standardize → PCA → class-weighted L1 logistic regression, with grid
//! search over (C, #PC) scored by MCC on the in-domain development split and
//! a tuned decision threshold.

pub mod logreg;
pub mod metrics;
pub mod pca;

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureId, FeatureMatrix};

pub use logreg::{fit_logreg, fit_logreg_weighted, sigmoid, ClassWeights, LogRegFit};
pub use metrics::{mcc, metrics, Confusion};
pub use pca::{fit_pca, Pca};

pub const MODEL_SCHEMA: &str = "attn-topo/model/v1";
pub const DEFAULT_C_GRID: [f64; 3] = [1e-3, 1e-2, 0.1];
pub const MAX_PC: usize = 200;

pub fn default_pc_grid() -> Vec<usize> {
    (1..=20).map(|i| i * 10).collect()
}

/// Per-feature standardization fitted on training data. Constant columns
/// are dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    /// Population mean of every feature.
    pub means: Vec<f64>,
    /// Population standard deviation; 0 for dropped features.
    pub stds: Vec<f64>,
    /// Indices of kept (non-constant) features, increasing.
    pub retained: Vec<usize>,
}

impl Standardizer {
    pub fn fit(x: &FeatureMatrix) -> Self {
        let n = x.n_rows() as f64;
        let mut means = Vec::with_capacity(x.n_cols());
        let mut stds = Vec::with_capacity(x.n_cols());
        let mut retained = Vec::new();
        for j in 0..x.n_cols() {
            let col = x.column(j);
            let mean = col.iter().sum::<f64>() / n;
            let constant = col.iter().all(|&v| v == col[0]);
            let std = if constant {
                0.0
            } else {
                (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
            };
            if std > 0.0 {
                retained.push(j);
            }
            means.push(mean);
            stds.push(std);
        }
        Standardizer { means, stds, retained }
    }

    /// z-scores of the retained columns, `n × retained`.
    pub fn transform(&self, x: &FeatureMatrix) -> DMatrix<f64> {
        DMatrix::from_fn(x.n_rows(), self.retained.len(), |i, k| {
            let j = self.retained[k];
            (x.get(i, j) - self.means[j]) / self.stds[j]
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub schema: String,
    #[serde(with = "rendered_ids")]
    pub feature_ids: Vec<FeatureId>,
    pub standardizer: Standardizer,
    /// `num_pc × retained`, orthonormal rows.
    pub components: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub decision_threshold: f64,
    pub chosen_c: Option<f64>,
    pub chosen_num_pc: usize,
}

mod rendered_ids {
    use serde::{de::Error as _, Deserialize, Deserializer, Serializer};

    use crate::features::FeatureId;

    pub fn serialize<S: Serializer>(ids: &[FeatureId], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(ids.iter().map(ToString::to_string))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<FeatureId>, D::Error> {
        Vec::<String>::deserialize(d)?
            .iter()
            .map(|s| s.parse().map_err(D::Error::custom))
            .collect()
    }
}

impl TrainedModel {
    pub fn num_features(&self) -> usize {
        self.feature_ids.len()
    }

    /// Names of features dropped for zero training variance.
    pub fn dropped_features(&self) -> Vec<&FeatureId> {
        let kept: std::collections::HashSet<usize> = self.standardizer.retained.iter().copied().collect();
        (0..self.num_features())
            .filter(|j| !kept.contains(j))
            .map(|j| &self.feature_ids[j])
            .collect()
    }

    /// `Cᵀw` mapped back onto the full feature registry (0 for dropped
    /// features): the weight of each standardized feature in the logit.
    pub fn feature_weights(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.num_features()];
        for (k, &j) in self.standardizer.retained.iter().enumerate() {
            out[j] = self
                .components
                .iter()
                .zip(&self.weights)
                .map(|(row, w)| row[k] * w)
                .sum();
        }
        out
    }

    pub fn check_registry(&self, x: &FeatureMatrix) -> Result<()> {
        if x.feature_ids != self.feature_ids {
            let detail = if x.n_cols() != self.num_features() {
                format!("{} columns, model expects {}", x.n_cols(), self.num_features())
            } else {
                let j = (0..x.n_cols())
                    .find(|&j| x.feature_ids[j] != self.feature_ids[j])
                    .unwrap_or(0);
                format!("column {j} is {}, model expects {}", x.feature_ids[j], self.feature_ids[j])
            };
            return Err(Error::FeatureMismatch(detail));
        }
        Ok(())
    }

    /// z-scores on the full registry; dropped features score 0.
    pub fn standardized(&self, x: &FeatureMatrix) -> Result<Vec<Vec<f64>>> {
        self.check_registry(x)?;
        let s = &self.standardizer;
        Ok((0..x.n_rows())
            .map(|i| {
                let mut z = vec![0.0; self.num_features()];
                for &j in &s.retained {
                    z[j] = (x.get(i, j) - s.means[j]) / s.stds[j];
                }
                z
            })
            .collect())
    }

    pub fn logits(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        self.check_registry(x)?;
        let z = self.standardizer.transform(x);
        Ok((0..x.n_rows())
            .map(|i| {
                let row = z.row(i);
                self.components
                    .iter()
                    .zip(&self.weights)
                    .map(|(comp, w)| w * comp.iter().zip(row.iter()).map(|(c, v)| c * v).sum::<f64>())
                    .sum::<f64>()
                    + self.bias
            })
            .collect())
    }

    pub fn predict(&self, x: &FeatureMatrix) -> Result<(Vec<f64>, Vec<u8>)> {
        let probs: Vec<f64> = self.logits(x)?.into_iter().map(sigmoid).collect();
        let labels = probs
            .iter()
            .map(|&p| u8::from(p >= self.decision_threshold))
            .collect();
        Ok((probs, labels))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Model(e.to_string()))
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let m: TrainedModel = serde_json::from_str(json).map_err(|e| Error::Model(e.to_string()))?;
        if m.schema != MODEL_SCHEMA {
            return Err(Error::Model(format!("unsupported schema {:?}", m.schema)));
        }
        let p = m.num_features();
        let s = &m.standardizer;
        if s.means.len() != p || s.stds.len() != p || s.retained.iter().any(|&j| j >= p || s.stds[j] <= 0.0) {
            return Err(Error::Model("standardizer does not match the registry".into()));
        }
        if m.components.len() != m.weights.len() || m.components.iter().any(|r| r.len() != s.retained.len()) {
            return Err(Error::Model("component matrix has the wrong shape".into()));
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridOptions {
    pub c_grid: Vec<f64>,
    pub pc_grid: Vec<usize>,
    /// Lifts the 200-component ceiling.
    pub allow_large_pc: bool,
}

impl Default for GridOptions {
    fn default() -> Self {
        GridOptions {
            c_grid: DEFAULT_C_GRID.to_vec(),
            pc_grid: default_pc_grid(),
            allow_large_pc: false,
        }
    }
}

impl GridOptions {
    pub fn validate(&self) -> Result<()> {
        if self.c_grid.is_empty() || self.c_grid.iter().any(|&c| !(c > 0.0 && c.is_finite())) {
            return Err(Error::InvalidConfig("C grid must be non-empty and positive".into()));
        }
        if self.pc_grid.is_empty() || self.pc_grid.contains(&0) {
            return Err(Error::InvalidConfig("PC grid must be non-empty and positive".into()));
        }
        if !self.allow_large_pc && self.pc_grid.iter().any(|&p| p > MAX_PC) {
            return Err(Error::InvalidConfig(format!(
                "PC values above {MAX_PC} need an explicit override"
            )));
        }
        Ok(())
    }
}

/// Largest usable component count: `min(200, ⌊|IDD| / 2⌋, rank)`.
pub fn pc_cap(idd_size: usize, rank: usize, allow_large_pc: bool) -> usize {
    let ceiling = if allow_large_pc { usize::MAX } else { MAX_PC };
    ceiling.min(idd_size / 2).min(rank)
}

/// Grid values not above `cap`; if none survive, the cap itself (when positive).
pub fn clip_pc_grid(grid: &[usize], cap: usize) -> Vec<usize> {
    let mut out: Vec<usize> = grid.iter().copied().filter(|&p| p <= cap).collect();
    out.sort_unstable();
    out.dedup();
    if out.is_empty() && cap > 0 {
        out.push(cap);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub c: f64,
    pub num_pc: usize,
    /// IDD MCC at the default 0.5 threshold.
    pub idd_mcc: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub points: Vec<GridPoint>,
    pub pc_cap: usize,
    pub rank: usize,
    pub dropped_features: usize,
    pub chosen_c: Option<f64>,
    pub chosen_num_pc: usize,
    pub decision_threshold: f64,
    pub idd_mcc_tuned: f64,
}

/// Threshold in (0, 1) maximizing MCC, scanned over 0.5 and the midpoints
/// between consecutive distinct probabilities. Ties go to the candidate
/// nearest 0.5, then the smaller one.
pub fn tune_threshold(probs: &[f64], y: &[u8]) -> Result<(f64, f64)> {
    if probs.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: probs.len(),
            right: y.len(),
        });
    }
    let mut sorted: Vec<f64> = probs.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let mut candidates = vec![0.5];
    candidates.extend(sorted.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    let mut best: (f64, f64) = (0.5, f64::NEG_INFINITY);
    for &t in &candidates {
        if !(t > 0.0 && t < 1.0) {
            continue;
        }
        let pred: Vec<u8> = probs.iter().map(|&p| u8::from(p >= t)).collect();
        let m = Confusion::from_labels(y, &pred)?.mcc();
        let better = m > best.1
            || (m == best.1
                && ((t - 0.5).abs() < (best.0 - 0.5).abs()
                    || ((t - 0.5).abs() == (best.0 - 0.5).abs() && t < best.0)));
        if better {
            best = (t, m);
        }
    }
    Ok(best)
}

fn check_labels(x: &FeatureMatrix, y: &[u8]) -> Result<()> {
    if x.n_rows() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.n_rows(),
            right: y.len(),
        });
    }
    Ok(())
}

fn bias_only(
    feature_ids: Vec<FeatureId>,
    standardizer: Standardizer,
    y_train: &[u8],
    c_grid: &[f64],
    idd: &FeatureMatrix,
    y_idd: &[u8],
) -> Result<(TrainedModel, GridReport)> {
    log::warn!("no feature varies on the training split; fitting a bias-only model");
    let n = y_train.len();
    let z = DMatrix::zeros(n, 0);
    let fit = fit_logreg(&z, y_train, c_grid[0], ClassWeights::Balanced)?;
    let mut model = TrainedModel {
        schema: MODEL_SCHEMA.into(),
        feature_ids,
        standardizer,
        components: vec![],
        weights: vec![],
        bias: fit.bias,
        decision_threshold: 0.5,
        chosen_c: None,
        chosen_num_pc: 0,
    };
    let (_, pred) = model.predict(idd)?;
    let m = mcc(y_idd, &pred)?;
    let points = c_grid
        .iter()
        .map(|&c| GridPoint {
            c,
            num_pc: 0,
            idd_mcc: m,
            iterations: fit.iterations,
            converged: fit.converged,
        })
        .collect();
    let (probs, _) = model.predict(idd)?;
    let (t, tuned) = tune_threshold(&probs, y_idd)?;
    model.decision_threshold = t;
    let report = GridReport {
        points,
        pc_cap: 0,
        rank: 0,
        dropped_features: model.num_features(),
        chosen_c: None,
        chosen_num_pc: 0,
        decision_threshold: t,
        idd_mcc_tuned: tuned,
    };
    Ok((model, report))
}

/// Fits every (C, #PC) grid point on `train`, keeps the one with the best
/// IDD MCC (ties: fewer components, then smaller C) and tunes its decision
/// threshold on IDD.
pub fn grid_search(
    train: &FeatureMatrix,
    y_train: &[u8],
    idd: &FeatureMatrix,
    y_idd: &[u8],
    opts: &GridOptions,
) -> Result<(TrainedModel, GridReport)> {
    opts.validate()?;
    check_labels(train, y_train)?;
    check_labels(idd, y_idd)?;
    if train.n_rows() == 0 || idd.n_rows() == 0 {
        return Err(Error::EmptyCorpus);
    }
    if train.feature_ids != idd.feature_ids {
        return Err(Error::FeatureMismatch("train and IDD registries differ".into()));
    }
    let standardizer = Standardizer::fit(train);
    if standardizer.retained.is_empty() {
        return bias_only(train.feature_ids.clone(), standardizer, y_train, &opts.c_grid, idd, y_idd);
    }
    let x = standardizer.transform(train);
    let x_idd = standardizer.transform(idd);

    let max_possible = x.nrows().min(x.ncols());
    let full = fit_pca(&x, max_possible.min(opts.pc_grid.iter().copied().max().unwrap_or(1)).max(1))?;
    let rank = full.rank;
    let cap = pc_cap(idd.n_rows(), rank, opts.allow_large_pc);
    let pcs = clip_pc_grid(&opts.pc_grid, cap.min(full.num_components()));
    if pcs.is_empty() {
        return bias_only(train.feature_ids.clone(), standardizer, y_train, &opts.c_grid, idd, y_idd);
    }
    log::info!(
        "grid: C {:?} x #PC {:?} (cap {cap}, rank {rank})",
        opts.c_grid,
        pcs
    );
    let proj_train = &x * full.components.transpose();
    let proj_idd = &x_idd * full.components.transpose();

    let tasks: Vec<(f64, usize)> = opts
        .c_grid
        .iter()
        .flat_map(|&c| pcs.iter().map(move |&p| (c, p)))
        .collect();
    let fits: Vec<(GridPoint, LogRegFit)> = tasks
        .par_iter()
        .map(|&(c, p)| {
            let z = proj_train.columns(0, p).into_owned();
            let fit = fit_logreg(&z, y_train, c, ClassWeights::Balanced)?;
            let zi = proj_idd.columns(0, p);
            let pred: Vec<u8> = (0..zi.nrows())
                .map(|i| {
                    let logit = zi.row(i).iter().zip(&fit.weights).map(|(a, b)| a * b).sum::<f64>() + fit.bias;
                    u8::from(sigmoid(logit) >= 0.5)
                })
                .collect();
            let point = GridPoint {
                c,
                num_pc: p,
                idd_mcc: mcc(y_idd, &pred)?,
                iterations: fit.iterations,
                converged: fit.converged,
            };
            Ok((point, fit))
        })
        .collect::<Result<_>>()?;

    let best = fits
        .iter()
        .enumerate()
        .max_by(|(_, a), (_, b)| {
            a.0.idd_mcc
                .total_cmp(&b.0.idd_mcc)
                .then(b.0.num_pc.cmp(&a.0.num_pc))
                .then(b.0.c.total_cmp(&a.0.c))
        })
        .map(|(i, _)| i)
        .expect("non-empty grid");
    let (point, fit) = &fits[best];
    let comps = full.truncated(point.num_pc).components;
    let mut model = TrainedModel {
        schema: MODEL_SCHEMA.into(),
        feature_ids: train.feature_ids.clone(),
        standardizer,
        components: comps.row_iter().map(|r| r.iter().copied().collect()).collect(),
        weights: fit.weights.clone(),
        bias: fit.bias,
        decision_threshold: 0.5,
        chosen_c: Some(point.c),
        chosen_num_pc: point.num_pc,
    };
    let (probs, _) = model.predict(idd)?;
    let (threshold, tuned) = tune_threshold(&probs, y_idd)?;
    model.decision_threshold = threshold;
    let report = GridReport {
        points: fits.into_iter().map(|(p, _)| p).collect(),
        pc_cap: cap,
        rank,
        dropped_features: model.num_features() - model.standardizer.retained.len(),
        chosen_c: model.chosen_c,
        chosen_num_pc: model.chosen_num_pc,
        decision_threshold: threshold,
        idd_mcc_tuned: tuned,
    };
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureFamily;

    fn ids(n: usize) -> Vec<FeatureId> {
        (0..n)
            .map(|h| FeatureId {
                layer: 0,
                head: h,
                family: FeatureFamily::Barcode,
                name: "h0_sum_lengths".into(),
                threshold: None,
            })
            .collect()
    }

    fn matrix(rows: &[Vec<f64>]) -> FeatureMatrix {
        FeatureMatrix::new(
            (0..rows.len()).map(|i| format!("s{i}")).collect(),
            ids(rows[0].len()),
            rows.concat(),
        )
        .unwrap()
    }

    #[test]
    fn pc_grid_clipping() {
        assert_eq!(clip_pc_grid(&default_pc_grid(), pc_cap(60, 1000, false)), vec![10, 20, 30]);
        assert_eq!(pc_cap(1000, 1000, false), 200);
        assert_eq!(pc_cap(1000, 1000, true), 500);
        assert_eq!(clip_pc_grid(&default_pc_grid(), 4), vec![4]);
        assert!(clip_pc_grid(&default_pc_grid(), 0).is_empty());
    }

    #[test]
    fn hand_built_model_prediction() {
        let model = TrainedModel {
            schema: MODEL_SCHEMA.into(),
            feature_ids: ids(2),
            standardizer: Standardizer {
                means: vec![1.0, 2.0],
                stds: vec![2.0, 0.5],
                retained: vec![0, 1],
            },
            components: vec![vec![0.6, 0.8]],
            weights: vec![1.5],
            bias: -0.25,
            decision_threshold: 0.5,
            chosen_c: Some(0.1),
            chosen_num_pc: 1,
        };
        let x = matrix(&[vec![3.0, 2.5], vec![1.0, 2.0]]);
        let (p, labels) = model.predict(&x).unwrap();
        // z = (1, 1); proj = 1.4; logit = 2.1 - 0.25
        let expected = 1.0 / (1.0 + (-1.85f64).exp());
        assert!((p[0] - expected).abs() < 1e-12);
        assert!((p[1] - sigmoid(-0.25)).abs() < 1e-15);
        assert_eq!(labels, vec![1, 0]);
        let json = model.to_json().unwrap();
        assert_eq!(TrainedModel::from_json(&json).unwrap(), model);
        let fw = model.feature_weights();
        assert!((fw[0] - 0.9).abs() < 1e-15 && (fw[1] - 1.2).abs() < 1e-15);
    }

    #[test]
    fn registry_mismatch_is_reported() {
        let x = matrix(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![2.0, 1.0], vec![0.0, 3.0]]);
        let y = [1, 0, 1, 0];
        let (model, _) = grid_search(&x, &y, &x, &y, &GridOptions::default()).unwrap();
        let other = matrix(&[vec![1.0, 0.0, 2.0]]);
        assert!(matches!(model.predict(&other), Err(Error::FeatureMismatch(_))));
    }

    #[test]
    fn constant_features_fall_back_to_bias_only() {
        let x = matrix(&vec![vec![1.0, 2.0]; 6]);
        let y = [1, 0, 1, 0, 0, 0];
        let (model, report) = grid_search(&x, &y, &x, &y, &GridOptions::default()).unwrap();
        assert_eq!(model.chosen_num_pc, 0);
        assert_eq!(model.dropped_features().len(), 2);
        let (_, pred) = model.predict(&x).unwrap();
        assert_eq!(mcc(&y, &pred).unwrap(), 0.0);
        assert!(report.points.iter().all(|p| p.idd_mcc == 0.0));
    }

    #[test]
    fn label_feature_reaches_perfect_mcc() {
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|i| {
                let label = (i % 2) as f64;
                vec![label, ((i * 7) % 5) as f64, ((i * 3) % 11) as f64]
            })
            .collect();
        let y: Vec<u8> = (0..40).map(|i| (i % 2) as u8).collect();
        let x = matrix(&rows);
        let opts = GridOptions {
            pc_grid: vec![1, 2, 3],
            ..GridOptions::default()
        };
        let (model, report) = grid_search(&x, &y, &x, &y, &opts).unwrap();
        assert!(report.points.iter().any(|p| p.idd_mcc == 1.0));
        let (_, pred) = model.predict(&x).unwrap();
        assert_eq!(mcc(&y, &pred).unwrap(), 1.0);
    }

    #[test]
    fn threshold_tuning_finds_separating_cut() {
        let probs = [0.1, 0.2, 0.3, 0.35, 0.9];
        let y = [0, 0, 1, 1, 1];
        let (t, m) = tune_threshold(&probs, &y).unwrap();
        assert_eq!(m, 1.0);
        assert!((t - 0.25).abs() < 1e-12);
    }
}
