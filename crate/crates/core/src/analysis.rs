//! Model introspection: attention and feature distances between two
//! models, per-sentence feature contributions, head roles, confidence and
//! per-category recall.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureId, FeatureMatrix};
use crate::linear_model::TrainedModel;
use crate::tensor_io::{AttentionTensor, Category};

/// Jensen–Shannon divergence in nats, with `0·ln 0 = 0`.
pub fn js_pair(p: &[f32], q: &[f32]) -> f64 {
    let mut kl_p = 0.0;
    let mut kl_q = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let (a, b) = (f64::from(a), f64::from(b));
        let m = 0.5 * (a + b);
        if a > 0.0 {
            kl_p += a * (a / m).ln();
        }
        if b > 0.0 {
            kl_q += b * (b / m).ln();
        }
    }
    (0.5 * kl_p + 0.5 * kl_q).max(0.0)
}

/// Mean JS divergence of one sentence over the heads of `layers` and all
/// query rows.
fn sentence_js(a: &AttentionTensor, b: &AttentionTensor, layers: &[usize]) -> f64 {
    let k = a.num_tokens();
    let mut total = 0.0;
    for &l in layers {
        for h in 0..a.heads() {
            let (ma, mb) = (a.head(l, h), b.head(l, h));
            for i in 0..k {
                total += js_pair(ma.row(i), mb.row(i));
            }
        }
    }
    total / (layers.len() * a.heads() * k) as f64
}

/// Mean over sentences, heads of the layers in scope, and query tokens of
/// `JS(row_1 ‖ row_0)`. `layer = None` covers all layers.
pub fn js_divergence(t0: &[AttentionTensor], t1: &[AttentionTensor], layer: Option<usize>) -> Result<f64> {
    if t0.len() != t1.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} vs {} sentences",
            t0.len(),
            t1.len()
        )));
    }
    if t0.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut total = 0.0;
    for (n, (a, b)) in t0.iter().zip(t1).enumerate() {
        if (a.layers(), a.heads(), a.num_tokens()) != (b.layers(), b.heads(), b.num_tokens()) {
            return Err(Error::ShapeMismatch(format!("sentence {n}: tensor shapes differ")));
        }
        let layers: Vec<usize> = match layer {
            Some(l) if l < a.layers() => vec![l],
            Some(l) => return Err(Error::ShapeMismatch(format!("layer {l} out of range"))),
            None => (0..a.layers()).collect(),
        };
        total += sentence_js(a, b, &layers);
    }
    Ok(total / t0.len() as f64)
}

/// `1 − Pearson(u, v)`; 0 for equal constant columns, 1 when exactly one is
/// constant or both are different constants. Identical columns give exactly
/// 0. Clamped to [0, 2].
pub fn correlation_distance(u: &[f64], v: &[f64]) -> f64 {
    if u == v {
        return 0.0;
    }
    let const_u = u.iter().all(|&x| x == u[0]);
    let const_v = v.iter().all(|&x| x == v[0]);
    match (const_u, const_v) {
        (true, true) => return if u[0] == v[0] { 0.0 } else { 1.0 },
        (true, false) | (false, true) => return 1.0,
        _ => {}
    }
    let n = u.len() as f64;
    let mu = u.iter().sum::<f64>() / n;
    let mv = v.iter().sum::<f64>() / n;
    let (mut suv, mut suu, mut svv) = (0.0, 0.0, 0.0);
    for (&a, &b) in u.iter().zip(v) {
        let (da, db) = (a - mu, b - mv);
        suv += da * db;
        suu += da * da;
        svv += db * db;
    }
    (1.0 - suv / (suu.sqrt() * svv.sqrt())).clamp(0.0, 2.0)
}

fn check_same_registry(f0: &FeatureMatrix, f1: &FeatureMatrix) -> Result<()> {
    if f0.feature_ids != f1.feature_ids {
        return Err(Error::RegistryMismatch("feature ids differ".into()));
    }
    if f0.sentence_ids != f1.sentence_ids {
        return Err(Error::RegistryMismatch("sentence ids differ".into()));
    }
    if f0.n_rows() == 0 {
        return Err(Error::EmptyCorpus);
    }
    Ok(())
}

/// Average over heads in scope of the mean correlation distance of that
/// head's features. `heads = None` uses every head in the registry.
pub fn tda_distance(f0: &FeatureMatrix, f1: &FeatureMatrix, heads: Option<&[(usize, usize)]>) -> Result<f64> {
    check_same_registry(f0, f1)?;
    let mut per_head: BTreeMap<(usize, usize), (f64, usize)> = BTreeMap::new();
    for (j, id) in f0.feature_ids.iter().enumerate() {
        let key = id.head_key();
        if heads.is_some_and(|hs| !hs.contains(&key)) {
            continue;
        }
        let d = correlation_distance(&f0.column(j), &f1.column(j));
        let e = per_head.entry(key).or_default();
        e.0 += d;
        e.1 += 1;
    }
    if per_head.is_empty() {
        return Err(Error::RegistryMismatch("no features for the requested heads".into()));
    }
    Ok(per_head.values().map(|(s, n)| s / *n as f64).sum::<f64>() / per_head.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDistance {
    pub layer: usize,
    pub js_divergence: f64,
    pub tda_distance: f64,
    /// `None` for the whole corpus.
    pub category: Option<Category>,
}

/// Per-layer JS divergence and feature distance between a reference model
/// (`t0`, `f0`) and a changed one. Rows of the matrices must follow the
/// tensor order.
pub fn layer_distances(
    t0: &[AttentionTensor],
    t1: &[AttentionTensor],
    f0: &FeatureMatrix,
    f1: &FeatureMatrix,
    category: Option<Category>,
) -> Result<Vec<LayerDistance>> {
    check_same_registry(f0, f1)?;
    let layers: BTreeSet<usize> = f0.feature_ids.iter().map(|f| f.layer).collect();
    layers
        .into_iter()
        .map(|layer| {
            let heads: Vec<(usize, usize)> = f0
                .feature_ids
                .iter()
                .filter(|f| f.layer == layer)
                .map(FeatureId::head_key)
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            Ok(LayerDistance {
                layer,
                js_divergence: js_divergence(t0, t1, Some(layer))?,
                tda_distance: tda_distance(f0, f1, Some(&heads))?,
                category,
            })
        })
        .collect()
}

/// Per-sentence contributions `z(i, f) · (Cᵀw)_f` and logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Contributions {
    pub bias: f64,
    /// sentences × features
    pub values: Vec<Vec<f64>>,
    pub logits: Vec<f64>,
}

pub fn feature_contributions(model: &TrainedModel, x: &FeatureMatrix) -> Result<Contributions> {
    let z = model.standardized(x)?;
    let w = model.feature_weights();
    let values: Vec<Vec<f64>> = z
        .iter()
        .map(|row| row.iter().zip(&w).map(|(a, b)| a * b).collect())
        .collect();
    let logits: Vec<f64> = values.iter().map(|r| r.iter().sum::<f64>() + model.bias).collect();
    let direct = model.logits(x)?;
    for (i, (a, b)) in logits.iter().zip(&direct).enumerate() {
        if (a - b).abs() > 1e-9 * (1.0 + b.abs()) {
            return Err(Error::Invariant(format!(
                "sentence {i}: contributions sum to {a}, logit is {b}"
            )));
        }
    }
    Ok(Contributions {
        bias: model.bias,
        values,
        logits,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadRole {
    Agreeing,
    Disagreeing,
    /// Both agreeing and disagreeing.
    Mixed,
    Neutral,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadStats {
    pub layer: usize,
    pub head: usize,
    /// Share of the total `|Cᵀw|` mass carried by this head's features.
    pub importance_score: f64,
    pub important_feature_count: usize,
    /// Mean signed contribution toward the true class on correct predictions.
    pub agreement: f64,
    /// Mean signed contribution toward the predicted class on errors.
    pub disagreement: f64,
    pub role: HeadRole,
    /// Rendered feature id and mean contribution toward the true class,
    /// largest magnitude first.
    pub top_features: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadReport {
    pub quantile: f64,
    pub heads: Vec<HeadStats>,
}

impl HeadReport {
    pub fn get(&self, layer: usize, head: usize) -> Option<&HeadStats> {
        self.heads.iter().find(|h| h.layer == layer && h.head == head)
    }

    /// `layers × heads` grid of `f(head)`, the data behind a head heat map.
    pub fn grid(&self, f: impl Fn(&HeadStats) -> f64) -> Vec<Vec<f64>> {
        let nl = self.heads.iter().map(|h| h.layer + 1).max().unwrap_or(0);
        let nh = self.heads.iter().map(|h| h.head + 1).max().unwrap_or(0);
        let mut g = vec![vec![0.0; nh]; nl];
        for h in &self.heads {
            g[h.layer][h.head] = f(h);
        }
        g
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadRoleOptions {
    /// Percentile cut for "top" heads and important features.
    pub quantile: f64,
    pub top_k: usize,
}

impl Default for HeadRoleOptions {
    fn default() -> Self {
        HeadRoleOptions {
            quantile: 0.9,
            top_k: 5,
        }
    }
}

/// Linear-interpolation percentile of `xs` at `q` ∈ [0, 1].
pub fn percentile(xs: &[f64], q: f64) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    s[lo] + (s[hi] - s[lo]) * (pos - lo as f64)
}

pub fn head_roles(
    model: &TrainedModel,
    x: &FeatureMatrix,
    y_true: &[u8],
    opts: HeadRoleOptions,
) -> Result<HeadReport> {
    if y_true.len() != x.n_rows() {
        return Err(Error::LengthMismatch {
            left: x.n_rows(),
            right: y_true.len(),
        });
    }
    let contrib = feature_contributions(model, x)?;
    let (_, pred) = model.predict(x)?;
    let weights = model.feature_weights();
    let abs_w: Vec<f64> = weights.iter().map(|w| w.abs()).collect();
    let cut = percentile(&abs_w, opts.quantile);
    let total_mass: f64 = abs_w.iter().sum();

    let mut groups: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (j, id) in model.feature_ids.iter().enumerate() {
        groups.entry(id.head_key()).or_default().push(j);
    }
    let sign = |label: u8| if label != 0 { 1.0 } else { -1.0 };
    let correct: Vec<usize> = (0..x.n_rows()).filter(|&i| pred[i] == y_true[i]).collect();
    let wrong: Vec<usize> = (0..x.n_rows()).filter(|&i| pred[i] != y_true[i]).collect();
    let mean_over = |rows: &[usize], cols: &[usize], labels: &[u8]| -> f64 {
        if rows.is_empty() {
            return 0.0;
        }
        rows.iter()
            .map(|&i| sign(labels[i]) * cols.iter().map(|&j| contrib.values[i][j]).sum::<f64>())
            .sum::<f64>()
            / rows.len() as f64
    };

    let mut heads: Vec<HeadStats> = groups
        .iter()
        .map(|(&(layer, head), cols)| {
            let mut top: Vec<(String, f64)> = cols
                .iter()
                .map(|&j| {
                    let m = (0..x.n_rows())
                        .map(|i| sign(y_true[i]) * contrib.values[i][j])
                        .sum::<f64>()
                        / x.n_rows().max(1) as f64;
                    (model.feature_ids[j].to_string(), m)
                })
                .filter(|(_, m)| *m != 0.0)
                .collect();
            top.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()).then(a.0.cmp(&b.0)));
            top.truncate(opts.top_k);
            HeadStats {
                layer,
                head,
                importance_score: if total_mass > 0.0 {
                    cols.iter().map(|&j| abs_w[j]).sum::<f64>() / total_mass
                } else {
                    0.0
                },
                important_feature_count: cols.iter().filter(|&&j| abs_w[j] > cut).count(),
                agreement: mean_over(&correct, cols, y_true),
                disagreement: mean_over(&wrong, cols, &pred),
                role: HeadRole::Neutral,
                top_features: top,
            }
        })
        .collect();

    let a: Vec<f64> = heads.iter().map(|h| h.agreement).collect();
    let d: Vec<f64> = heads.iter().map(|h| h.disagreement).collect();
    let (a_cut, d_cut) = (percentile(&a, opts.quantile), percentile(&d, opts.quantile));
    for h in &mut heads {
        let agreeing = h.agreement > 0.0 && h.agreement >= a_cut;
        let disagreeing = h.disagreement > 0.0 && h.disagreement >= d_cut;
        h.role = match (agreeing, disagreeing) {
            (true, true) => HeadRole::Mixed,
            (true, false) => HeadRole::Agreeing,
            (false, true) => HeadRole::Disagreeing,
            (false, false) => HeadRole::Neutral,
        };
    }
    Ok(HeadReport {
        quantile: opts.quantile,
        heads,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfidenceMode {
    /// `|logit|`
    AbsLogit,
    /// `Σ_f |contribution|`
    AbsContributions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceEntry {
    pub sentence_id: String,
    pub confidence: f64,
    pub logit: f64,
}

/// Per-sentence confidence, in input order.
pub fn confidence(model: &TrainedModel, x: &FeatureMatrix, mode: ConfidenceMode) -> Result<Vec<f64>> {
    let c = feature_contributions(model, x)?;
    Ok(match mode {
        ConfidenceMode::AbsLogit => c.logits.iter().map(|l| l.abs()).collect(),
        ConfidenceMode::AbsContributions => c
            .values
            .iter()
            .map(|r| r.iter().map(|v| v.abs()).sum())
            .collect(),
    })
}

/// Sentences sorted by increasing confidence (least confident first).
pub fn confidence_ranking(model: &TrainedModel, x: &FeatureMatrix, mode: ConfidenceMode) -> Result<Vec<ConfidenceEntry>> {
    let conf = confidence(model, x, mode)?;
    let logits = model.logits(x)?;
    let mut out: Vec<ConfidenceEntry> = (0..x.n_rows())
        .map(|i| ConfidenceEntry {
            sentence_id: x.sentence_ids[i].clone(),
            confidence: conf[i],
            logit: logits[i],
        })
        .collect();
    out.sort_by(|a, b| a.confidence.total_cmp(&b.confidence).then(a.sentence_id.cmp(&b.sentence_id)));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub sentence_id: String,
    pub logit: f64,
    pub bias: f64,
    pub predicted: u8,
    /// `(feature, head "(layer,head)", contribution)`, largest magnitude first.
    pub top: Vec<(String, String, f64)>,
    /// Sum of all contributions, including those not in `top`.
    pub contribution_sum: f64,
}

pub fn explain(model: &TrainedModel, x: &FeatureMatrix, top_k: usize) -> Result<Vec<Explanation>> {
    let c = feature_contributions(model, x)?;
    let (_, pred) = model.predict(x)?;
    Ok((0..x.n_rows())
        .map(|i| {
            let mut idx: Vec<usize> = (0..x.n_cols()).filter(|&j| c.values[i][j] != 0.0).collect();
            idx.sort_by(|&a, &b| c.values[i][b].abs().total_cmp(&c.values[i][a].abs()).then(a.cmp(&b)));
            idx.truncate(top_k);
            Explanation {
                sentence_id: x.sentence_ids[i].clone(),
                logit: c.logits[i],
                bias: c.bias,
                predicted: pred[i],
                top: idx
                    .into_iter()
                    .map(|j| {
                        let id = &model.feature_ids[j];
                        (id.to_string(), format!("({},{})", id.layer, id.head), c.values[i][j])
                    })
                    .collect(),
                contribution_sum: c.values[i].iter().sum(),
            }
        })
        .collect())
}

/// Percentage of each category's sentences whose prediction matches the
/// category's label. Categories with no sentences are absent.
pub fn per_category_recall(y_pred: &[u8], categories: &[Category]) -> Result<BTreeMap<Category, f64>> {
    if y_pred.len() != categories.len() {
        return Err(Error::LengthMismatch {
            left: y_pred.len(),
            right: categories.len(),
        });
    }
    let mut counts: BTreeMap<Category, (usize, usize)> = BTreeMap::new();
    for (&p, &c) in y_pred.iter().zip(categories) {
        let e = counts.entry(c).or_default();
        e.1 += 1;
        if p == c.label() {
            e.0 += 1;
        }
    }
    Ok(counts
        .into_iter()
        .map(|(c, (hit, n))| (c, 100.0 * hit as f64 / n as f64))
        .collect())
}

/// Per-category mean over several tables (e.g. IDD and OODD); a category
/// is averaged over the tables that contain it.
pub fn average_recalls(tables: &[BTreeMap<Category, f64>]) -> BTreeMap<Category, f64> {
    let mut acc: BTreeMap<Category, (f64, usize)> = BTreeMap::new();
    for t in tables {
        for (&c, &v) in t {
            let e = acc.entry(c).or_default();
            e.0 += v;
            e.1 += 1;
        }
    }
    acc.into_iter().map(|(c, (s, n))| (c, s / n as f64)).collect()
}
