mod common;

use std::fs;

use attn_topo::features::{extract_features, extract_from_tensors, ExtractConfig, FeatureMatrix};
use attn_topo::tensor_io::{load_manifest, records_in_split, Split};
use attn_topo::{Error, FeatureFamily, FeatureId};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tempfile::tempdir;

use common::*;

fn small_corpus() -> (tempfile::TempDir, FeatureMatrix) {
    let dir = tempdir().unwrap();
    let manifest = write_synthetic_corpus(dir.path(), [(Split::Train, 8), (Split::Idd, 4), (Split::Test, 4)], 3);
    let recs = load_manifest(manifest).unwrap();
    let fm = extract_features(&records_in_split(&recs, Split::Train), &ExtractConfig::default()).unwrap();
    (dir, fm)
}

#[test]
fn extraction_is_deterministic_across_pools() {
    let (dir, fm) = small_corpus();
    let recs = records_in_split(&load_manifest(dir.path().join("manifest.json")).unwrap(), Split::Train);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let single = pool.install(|| extract_features(&recs, &ExtractConfig::default())).unwrap();
    assert_eq!(single, fm);
    assert_eq!(fm.n_cols(), 2 * 2 * (9 * 6 + 16));
    let ids: Vec<&str> = fm.sentence_ids.iter().map(String::as_str).collect();
    assert_eq!(ids[0], "train-0000");
}

#[test]
fn novel_toggle_only_removes_its_columns() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let tensors: Vec<_> = (0..3).map(|i| synthetic_tensor(&mut rng, 2, 2, 7, i % 2)).collect();
    let ids: Vec<String> = (0..3).map(|i| format!("s{i}")).collect();
    let on = extract_from_tensors(&ids, &tensors, &ExtractConfig::default()).unwrap();
    let off_cfg = ExtractConfig {
        novel_features: false,
        ..ExtractConfig::default()
    };
    let off = extract_from_tensors(&ids, &tensors, &off_cfg).unwrap();
    assert_eq!(on.n_cols() - off.n_cols(), 2 * 2 * 2 * 6);
    for (j, id) in off.feature_ids.iter().enumerate() {
        let k = on.feature_ids.iter().position(|o| o == id).unwrap();
        assert_eq!(on.column(k), off.column(j), "{id}");
    }
    assert!(off
        .feature_ids
        .iter()
        .all(|f| f.name != "matching_number" && f.name != "chordal"));
}

#[test]
fn csv_and_cache_round_trip_exactly() {
    let (dir, fm) = small_corpus();
    let csv = dir.path().join("train.csv");
    let bin = dir.path().join("train.fmb");
    fm.write_csv(&csv).unwrap();
    fm.write_cache(&bin).unwrap();
    assert_eq!(FeatureMatrix::read_csv(&csv).unwrap(), fm);
    assert_eq!(FeatureMatrix::read(&bin).unwrap(), fm);
    assert_eq!(FeatureMatrix::read(&csv).unwrap(), fm);
}

#[test]
fn csv_header_and_unknown_columns() {
    let dir = tempdir().unwrap();
    let ok = dir.path().join("ok.csv");
    fs::write(
        &ok,
        "sentence_id,L0.H0.graph.edge_count@0.1,L0.H0.barcode.h0_bar_count,L0.H1.pattern.to_cls\na,3,4,0.25\nb,1,4,0.5\n",
    )
    .unwrap();
    let fm = FeatureMatrix::read_csv(&ok).unwrap();
    assert_eq!(fm.n_rows(), 2);
    assert_eq!(
        fm.feature_ids[0],
        FeatureId {
            layer: 0,
            head: 0,
            family: FeatureFamily::Graph,
            name: "edge_count".into(),
            threshold: Some(0.1)
        }
    );
    assert_eq!(fm.get(1, 2), 0.5);

    for header in [
        "sentence_id,L0.H0.graph.edge_weight@0.1",
        "sentence_id,L0.H0.graph.edge_count",
        "sentence_id,L0.H0.graph.edge_count@0.10",
        "id,L0.H0.graph.edge_count@0.1",
    ] {
        let p = dir.path().join("bad.csv");
        fs::write(&p, format!("{header}\na,1\n")).unwrap();
        assert!(
            matches!(FeatureMatrix::read_csv(&p), Err(Error::HeaderMismatch(_))),
            "{header}"
        );
    }
}

#[test]
fn manifest_record_errors_name_the_sentence() {
    let dir = tempdir().unwrap();
    let manifest = write_synthetic_corpus(dir.path(), [(Split::Train, 2), (Split::Idd, 0), (Split::Test, 0)], 1);
    let recs = load_manifest(&manifest).unwrap();
    fs::write(dir.path().join("train-0001.atnb"), b"ATNBjunk").unwrap();
    match extract_features(&recs, &ExtractConfig::default()) {
        Err(Error::Record { id, .. }) => assert_eq!(id, "train-0001"),
        other => panic!("unexpected {other:?}"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn feature_ids_round_trip(layer in 0usize..40, head in 0usize..40, thr in 0.0f64..=1.0, pick in 0usize..25) {
        let cfg = ExtractConfig { thresholds: vec![thr], ..ExtractConfig::default() };
        let layout = cfg.layout(layer + 1, head + 1);
        let id = &layout[layout.len() - 25 + pick % 25];
        let back: FeatureId = id.to_string().parse().unwrap();
        prop_assert_eq!(&back, id);
    }

    #[test]
    fn matrix_cache_round_trip(rows in 1usize..5, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors: Vec<_> = (0..rows).map(|_| random_tensor(&mut rng, 1, 2, 5)).collect();
        let ids: Vec<String> = (0..rows).map(|i| format!("r{i}")).collect();
        let fm = extract_from_tensors(&ids, &tensors, &ExtractConfig::default()).unwrap();
        prop_assert_eq!(FeatureMatrix::from_cache_bytes(&fm.to_cache_bytes()).unwrap(), fm);
    }
}
