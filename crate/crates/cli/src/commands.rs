use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;
use std::time::Instant;

use attn_topo::analysis::{
    confidence_ranking, explain, head_roles, layer_distances, per_category_recall, ConfidenceMode, HeadRoleOptions,
    LayerDistance,
};
use attn_topo::features::{extract_features, extract_from_tensors};
use attn_topo::linear_model::{grid_search, metrics, GridOptions};
use attn_topo::tensor_io::{load_manifest, records_in_split, AttentionTensor, Category, CorpusRecord, Split};
use attn_topo::{Error, ExtractConfig, FeatureMatrix, Result, TrainedModel};
use serde::Serialize;

use crate::labels::{self, Labels};

pub fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Parse(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| io_err(path, e))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn write_rows(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    let mut put = |rec: &[String]| w.write_record(rec).map_err(|e| Error::Parse(format!("{}: {e}", path.display())));
    put(&header.iter().map(|s| s.to_string()).collect::<Vec<_>>())?;
    for row in rows {
        put(&row)?;
    }
    w.flush().map_err(|e| io_err(path, e))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn load_labelled(matrix: &Path, labels: Option<&Path>) -> Result<(FeatureMatrix, Labels)> {
    let x = FeatureMatrix::read(matrix)?;
    let sidecar = labels.map(Path::to_path_buf).unwrap_or_else(|| labels::sidecar_path(matrix));
    let l = labels::read_for(&x, &sidecar)?;
    Ok((x, l))
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("split")
        .to_owned()
}

pub fn extract(manifest: &Path, config: &ExtractConfig, out: &Path) -> Result<()> {
    config.validate()?;
    let records = load_manifest(manifest)?;
    if records.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    for split in [Split::Train, Split::Idd, Split::Oodd, Split::Test] {
        let recs = records_in_split(&records, split);
        if recs.is_empty() {
            continue;
        }
        let start = Instant::now();
        let fm = extract_features(&recs, config)?;
        log::info!(
            "{split}: {} sentences x {} features in {:.2}s",
            fm.n_rows(),
            fm.n_cols(),
            start.elapsed().as_secs_f64()
        );
        fm.write_csv(out.join(format!("{split}.csv")))?;
        fm.write_cache(out.join(format!("{split}.fmb")))?;
        labels::write(&recs, &out.join(format!("{split}.labels.csv")))?;
    }
    Ok(())
}

pub fn train(
    train: &Path,
    idd: &Path,
    train_labels: Option<&Path>,
    idd_labels: Option<&Path>,
    opts: &GridOptions,
    out: &Path,
) -> Result<()> {
    let (x_train, l_train) = load_labelled(train, train_labels)?;
    let (x_idd, l_idd) = load_labelled(idd, idd_labels)?;
    let start = Instant::now();
    let (model, report) = grid_search(&x_train, &l_train.y, &x_idd, &l_idd.y, opts)?;
    log::info!(
        "grid search over {} points in {:.2}s: C={:?}, #PC={}, IDD MCC {:.4} after threshold tuning",
        report.points.len(),
        start.elapsed().as_secs_f64(),
        model.chosen_c,
        model.chosen_num_pc,
        report.idd_mcc_tuned
    );
    model.save(out.join("model.json"))?;
    write_json(&out.join("grid_report.json"), &report)?;
    write_rows(
        &out.join("grid_report.csv"),
        &["c", "num_pc", "idd_mcc", "iterations", "converged"],
        report.points.iter().map(|p| {
            vec![
                p.c.to_string(),
                p.num_pc.to_string(),
                p.idd_mcc.to_string(),
                p.iterations.to_string(),
                p.converged.to_string(),
            ]
        }),
    )
}

#[derive(Serialize)]
struct EvalReport {
    split: String,
    sentences: usize,
    accuracy: f64,
    mcc: f64,
    decision_threshold: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    per_category_recall: Option<BTreeMap<String, f64>>,
}

fn recall_table(pred: &[u8], categories: &[Category]) -> Result<BTreeMap<String, f64>> {
    Ok(per_category_recall(pred, categories)?
        .into_iter()
        .map(|(c, r)| (c.to_string(), r))
        .collect())
}

pub fn eval(model: &Path, split: &Path, labels: Option<&Path>, out: &Path) -> Result<()> {
    let model = TrainedModel::load(model)?;
    let (x, l) = load_labelled(split, labels)?;
    let (_, pred) = model.predict(&x)?;
    let (accuracy, mcc) = metrics(&l.y, &pred)?;
    let report = EvalReport {
        split: file_stem(split),
        sentences: x.n_rows(),
        accuracy,
        mcc,
        decision_threshold: model.decision_threshold,
        per_category_recall: l.categories.as_deref().map(|c| recall_table(&pred, c)).transpose()?,
    };
    log::info!("{}: accuracy {accuracy:.4}, MCC {mcc:.4}", report.split);
    write_json(&out.join(format!("{}.metrics.json", report.split)), &report)
}

fn load_tensors(records: &[CorpusRecord]) -> Result<Vec<AttentionTensor>> {
    records.iter().map(CorpusRecord::load_tensor).collect()
}

pub fn compare(
    manifest_a: &Path,
    manifest_b: &Path,
    split: Option<Split>,
    per_category: bool,
    config: &ExtractConfig,
    out: &Path,
) -> Result<()> {
    config.validate()?;
    let pick = |m: &Path| -> Result<Vec<CorpusRecord>> {
        let recs = load_manifest(m)?;
        Ok(match split {
            Some(s) => records_in_split(&recs, s),
            None => recs,
        })
    };
    let rec_a = pick(manifest_a)?;
    let rec_b = pick(manifest_b)?;
    if rec_a.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let by_id: HashMap<&str, &CorpusRecord> = rec_b.iter().map(|r| (r.id.as_str(), r)).collect();
    if rec_b.len() != rec_a.len() {
        return Err(Error::RegistryMismatch(format!(
            "{} sentences in A, {} in B",
            rec_a.len(),
            rec_b.len()
        )));
    }
    let rec_b: Vec<CorpusRecord> = rec_a
        .iter()
        .map(|r| {
            by_id
                .get(r.id.as_str())
                .map(|&b| b.clone())
                .ok_or_else(|| Error::RegistryMismatch(format!("sentence {:?} missing from B", r.id)))
        })
        .collect::<Result<_>>()?;
    let ids: Vec<String> = rec_a.iter().map(|r| r.id.clone()).collect();
    let t_a = load_tensors(&rec_a)?;
    let t_b = load_tensors(&rec_b)?;
    let f_a = extract_from_tensors(&ids, &t_a, config)?;
    let f_b = extract_from_tensors(&ids, &t_b, config)?;

    let mut rows: Vec<LayerDistance> = Vec::new();
    if per_category {
        let mut groups: BTreeMap<Category, Vec<usize>> = BTreeMap::new();
        for (i, r) in rec_a.iter().enumerate() {
            if let Some(c) = r.category {
                groups.entry(c).or_default().push(i);
            }
        }
        if groups.is_empty() {
            log::warn!("no sentence has a category; nothing to compare per category");
        }
        for (cat, idx) in groups {
            let sub = |t: &[AttentionTensor]| idx.iter().map(|&i| t[i].clone()).collect::<Vec<_>>();
            rows.extend(layer_distances(
                &sub(&t_a),
                &sub(&t_b),
                &f_a.select_rows(&idx),
                &f_b.select_rows(&idx),
                Some(cat),
            )?);
        }
        rows.sort_by_key(|r| (r.layer, r.category));
    } else {
        rows = layer_distances(&t_a, &t_b, &f_a, &f_b, None)?;
    }
    write_rows(
        &out.join("layer_distances.csv"),
        &["layer", "category", "js_divergence", "tda_distance"],
        rows.iter().map(|r| {
            vec![
                r.layer.to_string(),
                r.category.map(|c| c.to_string()).unwrap_or_else(|| "all".into()),
                r.js_divergence.to_string(),
                r.tda_distance.to_string(),
            ]
        }),
    )
}

pub fn heads(
    model: &Path,
    split: &Path,
    labels: Option<&Path>,
    opts: HeadRoleOptions,
    mode: ConfidenceMode,
    out: &Path,
) -> Result<()> {
    let model = TrainedModel::load(model)?;
    let (x, l) = load_labelled(split, labels)?;
    let report = head_roles(&model, &x, &l.y, opts)?;
    write_json(&out.join("heads.json"), &report)?;
    let grid = report.grid(|h| h.importance_score);
    let width = grid.first().map_or(0, Vec::len);
    let header: Vec<String> = std::iter::once("layer".to_owned())
        .chain((0..width).map(|h| format!("H{h}")))
        .collect();
    write_rows(
        &out.join("head_importance.csv"),
        &header.iter().map(String::as_str).collect::<Vec<_>>(),
        grid.iter().enumerate().map(|(layer, row)| {
            std::iter::once(layer.to_string())
                .chain(row.iter().map(f64::to_string))
                .collect()
        }),
    )?;
    write_rows(
        &out.join("head_roles.csv"),
        &[
            "layer",
            "head",
            "importance_score",
            "important_feature_count",
            "agreement",
            "disagreement",
            "role",
        ],
        report.heads.iter().map(|h| {
            vec![
                h.layer.to_string(),
                h.head.to_string(),
                h.importance_score.to_string(),
                h.important_feature_count.to_string(),
                h.agreement.to_string(),
                h.disagreement.to_string(),
                serde_json::to_value(h.role)
                    .ok()
                    .and_then(|v| v.as_str().map(str::to_owned))
                    .unwrap_or_default(),
            ]
        }),
    )?;
    let ranking = confidence_ranking(&model, &x, mode)?;
    write_rows(
        &out.join("confidence.csv"),
        &["sentence_id", "confidence", "logit"],
        ranking
            .iter()
            .map(|e| vec![e.sentence_id.clone(), e.confidence.to_string(), e.logit.to_string()]),
    )?;
    let explanations = explain(&model, &x, opts.top_k)?;
    write_json(&out.join("explanations.json"), &explanations)
}

