use std::collections::BTreeMap;
use std::path::PathBuf;

use apct_core::corruption::{build_suite, CorruptionKind, SeverityTable, SuiteCell, SuiteManifest, SuiteSample, SEVERITIES};
use apct_core::exec::Exec;
use apct_core::geometry::{generate_dataset, DatasetConfig};
use apct_core::metrics::{build_report, evaluate_suite, mce, moa, MetricsReport, PredictionSet};
use apct_core::model::{ModelConfig, ModelParams};
use apct_core::training::Prediction;
use apct_core::Error;

const SAMPLES: usize = 20;

fn suite() -> SuiteManifest {
    let cells = CorruptionKind::ALL
        .iter()
        .flat_map(|&kind| (1..=SEVERITIES as u8).map(move |severity| (kind, severity)))
        .map(|(kind, severity)| SuiteCell {
            kind,
            severity,
            dir: PathBuf::from(kind.cell_name(severity)),
            samples: (0..SAMPLES).map(|i| SuiteSample { id: format!("t{i}"), seed: i as u64 }).collect(),
        })
        .collect();
    SuiteManifest {
        dataset: PathBuf::from("data"),
        dataset_seed: 0,
        base_seed: 0,
        severity_table: SeverityTable::default(),
        cells,
    }
}

fn preds(wrong: usize) -> Vec<Prediction> {
    (0..SAMPLES).map(|i| Prediction { id: format!("t{i}"), pred: usize::from(i < wrong), label: 0 }).collect()
}

/// Wrong answers per cell given by `errors(kind index, severity)`.
fn prediction_set(clean_wrong: usize, errors: impl Fn(usize, usize) -> usize) -> PredictionSet {
    let mut cells = BTreeMap::new();
    for (k, kind) in CorruptionKind::ALL.iter().enumerate() {
        for s in 1..=SEVERITIES {
            cells.insert(kind.cell_name(s as u8), preds(errors(k, s)));
        }
    }
    PredictionSet { clean: preds(clean_wrong), cells }
}

#[test]
fn reference_rows_reproduce() {
    let t1 = mce(&[94.7, 88.3, 46.8, 85.0, 28.5, 29.8, 132.6]).unwrap();
    assert!((t1 - 72.2).abs() <= 0.05, "{t1}");
    let t2 = mce(&[104.5, 98.9, 48.9, 67.0, 30.0, 63.0, 107.1]).unwrap();
    assert!((t2 - 74.2).abs() <= 0.05, "{t2}");
    let rows: Vec<Vec<f64>> = [91.1, 72.1, 88.4, 82.4, 91.6, 91.8, 71.5].iter().map(|&v| vec![v; 5]).collect();
    let t6 = moa(&rows).unwrap();
    assert!((t6 - 84.1).abs() <= 0.05, "{t6}");
}

#[test]
fn identical_predictions_score_one_hundred() {
    let r = prediction_set(1, |k, s| s + k % 3);
    let report = build_report(&r, &r, &suite(), ("a", "a", "s")).unwrap();
    assert!((report.mce - 1.0).abs() < 1e-12);
    assert!((report.rmce - 1.0).abs() < 1e-12);
    assert_eq!(report.kinds.len(), 7);
    assert!(report.kinds.iter().all(|k| k.model_oa.len() == 5 && k.ce >= 0.0));
}

#[test]
fn ce_uses_sums_over_severities() {
    // Reference errors 2,4,6,8,10 per kind; the model makes half of them.
    let reference = prediction_set(0, |_, s| 2 * s);
    let model = prediction_set(0, |_, s| s);
    let report = build_report(&model, &reference, &suite(), ("m", "r", "s")).unwrap();
    assert!((report.mce - 0.5).abs() < 1e-12);
    assert!((report.rmce - 0.5).abs() < 1e-12);
    let expect_moa = 1.0 - (1..=5).map(|s| s as f64).sum::<f64>() / 5.0 / SAMPLES as f64;
    assert!((report.moa - expect_moa).abs() < 1e-12);
    assert!((report.mce - report.kinds.iter().map(|k| k.ce).sum::<f64>() / 7.0).abs() < 1e-12);
}

#[test]
fn missing_or_short_cells_are_incomplete() {
    let r = prediction_set(0, |_, s| s);
    let mut m = r.clone();
    m.cells.remove("jitter_3");
    assert!(matches!(build_report(&m, &r, &suite(), ("m", "r", "s")), Err(Error::Completeness(_))));
    let mut m = r.clone();
    m.cells.get_mut("add_local_5").unwrap().pop();
    assert!(matches!(build_report(&m, &r, &suite(), ("m", "r", "s")), Err(Error::Completeness(_))));
    let mut s = suite();
    s.cells.retain(|c| !(c.kind == CorruptionKind::Scale && c.severity == 1));
    assert!(matches!(build_report(&r, &r, &s, ("m", "r", "s")), Err(Error::Completeness(_))));
}

#[test]
fn reports_round_trip_at_one_decimal() {
    let reference = prediction_set(0, |k, s| s + k);
    let model = prediction_set(1, |_, s| s);
    let report = build_report(&model, &reference, &suite(), ("model", "ref", "suite")).unwrap();
    let text = report.to_text().unwrap();
    for key in ["\"mCE\"", "\"RmCE\"", "\"mOA\"", "\"CE\"", "\"RCE\""] {
        assert!(text.contains(key), "{key}");
    }
    let back = MetricsReport::from_text(&text).unwrap();
    assert_eq!(back.model, "model");
    assert!((back.mce - report.mce).abs() <= 0.0005 + 1e-12);
    assert!((back.moa - report.moa).abs() <= 0.0005 + 1e-12);
    assert_eq!(back.to_text().unwrap(), text);

    let truncated = text.replacen("\"kind\": \"scale\"", "\"kind\": \"rotate\"", 1);
    assert!(matches!(MetricsReport::from_text(&truncated), Err(Error::Completeness(_))));
}

#[test]
fn suite_evaluation_covers_every_cell() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let cfg = DatasetConfig { train_per_class: 1, test_per_class: 1, ..DatasetConfig::default() };
    generate_dataset(&data, &cfg, Exec::Parallel).unwrap();
    let root = dir.path().join("suite");
    let manifest = build_suite(&data, 3, &root, None, Exec::Parallel).unwrap();
    let params = ModelParams::<f32>::init(&ModelConfig::desk(), 0).unwrap();

    let a = evaluate_suite(&params, &root, Exec::Parallel).unwrap();
    let b = evaluate_suite(&params, &root, Exec::Sequential).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.clean.len(), 8);
    assert_eq!(a.cells.len(), 35);
    assert!(a.cells.values().all(|p| p.len() == 8));
    assert!(a.accuracy_grid().is_some());

    let out = dir.path().join("preds");
    std::fs::create_dir_all(&out).unwrap();
    a.save_dir(&out).unwrap();
    assert_eq!(PredictionSet::load_dir(&out).unwrap(), a);
    assert_eq!(manifest.cells.len(), 35);
}
