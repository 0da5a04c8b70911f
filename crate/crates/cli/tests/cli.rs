use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use apct_core::corruption::SuiteManifest;
use apct_core::geometry::DatasetManifest;
use apct_core::metrics::MetricsReport;
use apct_core::training::{read_predictions, write_predictions, Prediction, PREDICTION_HEADER};
use tempfile::TempDir;

fn apct(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_apct")).args(args).current_dir(cwd).output().expect("spawn apct")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = apct(args, cwd);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

/// Asserts a single `apct: error kind=<kind>: ...` line and a nonzero exit.
fn fails_with(args: &[&str], cwd: &Path, kind: &str) -> String {
    let out = apct(args, cwd);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.starts_with(&format!("apct: error kind={kind}: ")), "{err}");
    err
}

fn tiny_dataset(dir: &Path) {
    ok(&["gen-dataset", "--out", "data", "--train-per-class", "3", "--test-per-class", "1", "--seed", "5"], dir);
}

const TINY_TRAIN: &str = "[train]\nepochs = 2\nwarmup_epochs = 1\nbatch_size = 8\n";

fn files_under(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn gen_dataset_defaults_and_reproducibility() {
    let t = TempDir::new().unwrap();
    let stdout = ok(&["gen-dataset", "--out", "a"], t.path());
    assert_eq!(stdout.trim(), Path::new("a").join("manifest.json").display().to_string());
    let m = DatasetManifest::load(&t.path().join("a")).unwrap();
    assert_eq!((m.train.len(), m.test.len()), (800, 160));
    ok(&["--sequential", "gen-dataset", "--out", "b"], t.path());
    assert_eq!(files_under(&t.path().join("a")), files_under(&t.path().join("b")));
}

#[test]
fn gen_dataset_rejects_bad_input() {
    let t = TempDir::new().unwrap();
    fails_with(&["gen-dataset", "--out", "x", "--points", "4"], t.path(), "config");
    tiny_dataset(t.path());
    fails_with(&["gen-dataset", "--out", "data"], t.path(), "exists");
    ok(&["gen-dataset", "--out", "data", "--force", "--train-per-class", "1", "--test-per-class", "1"], t.path());
}

#[test]
fn corrupt_builds_full_or_single_cell_suites() {
    let t = TempDir::new().unwrap();
    tiny_dataset(t.path());
    ok(&["corrupt", "--data", "data", "--out", "suite", "--seed", "1"], t.path());
    let dirs = fs::read_dir(t.path().join("suite")).unwrap().filter(|e| e.as_ref().unwrap().path().is_dir()).count();
    assert_eq!(dirs, 35);
    assert!(SuiteManifest::load(&t.path().join("suite")).unwrap().is_complete());

    ok(&["corrupt", "--data", "data", "--out", "one", "--kind", "jitter", "--severity", "2"], t.path());
    let names: Vec<_> = fs::read_dir(t.path().join("one")).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names.len(), 2, "{names:?}");
    assert!(t.path().join("one/jitter_2").is_dir());

    let err = fails_with(&["corrupt", "--data", "data", "--out", "bad", "--kind", "blur", "--severity", "2"], t.path(), "spec");
    for kind in ["scale", "rotate", "jitter", "drop_global", "drop_local", "add_global", "add_local"] {
        assert!(err.contains(kind), "{err}");
    }
    fails_with(&["corrupt", "--data", "data", "--out", "bad", "--kind", "jitter"], t.path(), "usage");
}

#[test]
fn train_flags_select_the_ablation_cell() {
    let t = TempDir::new().unwrap();
    tiny_dataset(t.path());
    fs::write(t.path().join("run.toml"), TINY_TRAIN).unwrap();
    let cells: [(&[&str], bool, bool); 4] = [
        (&["--no-drop", "--no-aux"], false, false),
        (&["--no-drop"], false, true),
        (&["--no-aux"], true, false),
        (&[], true, true),
    ];
    for (i, (flags, drop, aux)) in cells.iter().enumerate() {
        let out = format!("m{i}");
        let mut args = vec!["train", "--config", "run.toml", "--data", "data", "--out", &out, "--no-eval"];
        args.extend_from_slice(flags);
        ok(&args, t.path());
        let resolved = fs::read_to_string(t.path().join(&out).join("config.toml")).unwrap();
        let v: toml::Table = resolved.parse().unwrap();
        assert_eq!(v["train"]["drop"].as_bool(), Some(*drop));
        assert_eq!(v["train"]["aux"].as_bool(), Some(*aux));
        assert!(t.path().join(&out).join("model.apct").is_file());
        let log = fs::read_to_string(t.path().join(&out).join("train_log.jsonl")).unwrap();
        assert_eq!(log.lines().count(), 2);
    }
}

#[test]
fn train_is_reproducible_and_validates_config() {
    let t = TempDir::new().unwrap();
    tiny_dataset(t.path());
    fs::write(t.path().join("run.toml"), TINY_TRAIN).unwrap();
    ok(&["train", "--config", "run.toml", "--data", "data", "--out", "a", "--seed", "3"], t.path());
    ok(&["--sequential", "train", "--config", "run.toml", "--data", "data", "--out", "b", "--seed", "3"], t.path());
    let a = fs::read(t.path().join("a/model.apct")).unwrap();
    assert_eq!(a, fs::read(t.path().join("b/model.apct")).unwrap());
    ok(&["train", "--config", "run.toml", "--data", "data", "--out", "c", "--seed", "4"], t.path());
    assert_ne!(a, fs::read(t.path().join("c/model.apct")).unwrap());

    fs::write(t.path().join("typo.toml"), "[train]\nepoch = 2\n").unwrap();
    fails_with(&["train", "--config", "typo.toml", "--data", "data", "--out", "x"], t.path(), "config");
    fs::write(t.path().join("heads.toml"), "[model]\nheads = 5\n").unwrap();
    fails_with(&["train", "--config", "heads.toml", "--data", "data", "--out", "x"], t.path(), "config");
    assert!(!t.path().join("x").exists(), "validation must precede any output");
}

#[test]
fn eval_outputs_are_deterministic_complete_and_well_formed() {
    let t = TempDir::new().unwrap();
    tiny_dataset(t.path());
    fs::write(t.path().join("run.toml"), TINY_TRAIN).unwrap();
    ok(&["train", "--config", "run.toml", "--data", "data", "--out", "m", "--no-eval"], t.path());
    ok(&["corrupt", "--data", "data", "--out", "one", "--kind", "rotate", "--severity", "3"], t.path());

    let first = ok(&["eval", "--model", "m/model.apct", "--data", "data", "--pred-out", "p1.csv"], t.path());
    let second = ok(&["--sequential", "eval", "--model", "m/model.apct", "--data", "data", "--pred-out", "p2.csv"], t.path());
    assert_eq!(first, second);
    assert!(first.starts_with("accuracy="));
    let p1 = fs::read_to_string(t.path().join("p1.csv")).unwrap();
    assert_eq!(p1, fs::read_to_string(t.path().join("p2.csv")).unwrap());
    assert_eq!(p1.lines().next(), Some(PREDICTION_HEADER));
    let preds = read_predictions(&t.path().join("p1.csv")).unwrap();
    assert_eq!(preds.len(), 8);
    let acc: f64 = first.trim().trim_start_matches("accuracy=").parse().unwrap();
    let expect = preds.iter().filter(|p| p.pred == p.label).count() as f64 / 8.0;
    assert!((acc - expect).abs() < 1e-4);

    ok(&["eval", "--model", "m/model.apct", "--suite-cell", "one/rotate_3", "--pred-out", "c.csv"], t.path());
    assert_eq!(read_predictions(&t.path().join("c.csv")).unwrap().len(), 8);
    fails_with(&["eval", "--model", "m/model.apct", "--pred-out", "c.csv"], t.path(), "usage");
    fails_with(&["eval", "--model", "missing.apct", "--data", "data", "--pred-out", "c.csv"], t.path(), "io");
}

/// Reference: clean all correct, severity s loses s samples. Model: one fewer loss per cell.
fn synthetic_predictions(suite: &SuiteManifest, dir: &Path, better: bool) {
    fs::create_dir_all(dir).unwrap();
    let mk = |ids: &[(String, u32)], wrong: usize| -> Vec<Prediction> {
        ids.iter()
            .enumerate()
            .map(|(i, (id, label))| Prediction { id: id.clone(), pred: if i < wrong { (*label as usize + 1) % 8 } else { *label as usize }, label: *label as usize })
            .collect()
    };
    let clean_ids: Vec<(String, u32)> = suite.cells[0].samples.iter().map(|s| (s.id.clone(), label_of(&s.id))).collect();
    write_predictions(&dir.join("clean.csv"), &mk(&clean_ids, 0)).unwrap();
    for cell in &suite.cells {
        let ids: Vec<(String, u32)> = cell.samples.iter().map(|s| (s.id.clone(), label_of(&s.id))).collect();
        let wrong = cell.severity as usize - usize::from(better);
        write_predictions(&dir.join(format!("{}.csv", cell.dir.display())), &mk(&ids, wrong)).unwrap();
    }
}

fn label_of(id: &str) -> u32 {
    let class = id.split('_').nth(1).unwrap();
    apct_core::geometry::CLASS_NAMES.iter().position(|c| *c == class).unwrap() as u32
}

#[test]
fn report_scores_and_completeness() {
    let t = TempDir::new().unwrap();
    tiny_dataset(t.path());
    ok(&["corrupt", "--data", "data", "--out", "suite"], t.path());
    let suite = SuiteManifest::load(&t.path().join("suite")).unwrap();
    synthetic_predictions(&suite, &t.path().join("ref"), false);
    synthetic_predictions(&suite, &t.path().join("model"), true);

    let same = ok(&["report", "--model-preds-dir", "ref", "--ref-preds-dir", "ref", "--suite", "suite", "--out", "same.json"], t.path());
    assert!(same.starts_with("mCE=100.0 RmCE=100.0"), "{same}");
    let r = MetricsReport::load(&t.path().join("same.json")).unwrap();
    assert_eq!(r.mce, 1.0);
    assert_eq!(r.kinds.iter().map(|k| k.model_oa.len()).sum::<usize>(), 35);

    // Errors per kind: reference 1+2+3+4+5 = 15, model 0+1+2+3+4 = 10, so CE = 10/15.
    ok(&["report", "--model-preds-dir", "model", "--ref-preds-dir", "ref", "--suite", "suite", "--out", "r.json"], t.path());
    let r = MetricsReport::load(&t.path().join("r.json")).unwrap();
    assert!((r.mce - 0.667).abs() < 1e-9, "{}", r.mce);

    fs::remove_file(t.path().join("model/drop_local_4.csv")).unwrap();
    let err = fails_with(
        &["report", "--model-preds-dir", "model", "--ref-preds-dir", "ref", "--suite", "suite", "--out", "x.json"],
        t.path(),
        "completeness",
    );
    assert!(err.contains("drop_local_4"), "{err}");
}

#[test]
fn inspect_significance_dump() {
    let t = TempDir::new().unwrap();
    tiny_dataset(t.path());
    fs::write(t.path().join("run.toml"), TINY_TRAIN).unwrap();
    ok(&["train", "--config", "run.toml", "--data", "data", "--out", "m", "--no-eval"], t.path());
    let cloud = "data/test/test_torus_0000.pcb";
    assert!(t.path().join(cloud).is_file());
    let args = ["inspect-significance", "--model", "m/model.apct", "--cloud", cloud, "--out", "a.json", "--svg", "a.svg"];
    ok(&args, t.path());
    let text = fs::read_to_string(t.path().join("a.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    let stages = v["stages"].as_array().unwrap();
    assert_eq!(stages.len(), 3);
    for st in stages {
        let tokens = st["tokens"].as_array().unwrap();
        assert_eq!(tokens.len(), 32);
        let total: u64 = tokens.iter().map(|t| t["count"].as_u64().unwrap()).sum();
        assert_eq!(total, 2 * 64, "k·C");
        for tok in tokens {
            let rate = tok["rate"].as_f64().unwrap();
            assert!((0.05..=0.95).contains(&rate), "{rate}");
        }
    }
    let svg = fs::read_to_string(t.path().join("a.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    assert_eq!(svg.matches("<title>").count(), 3 * 32);

    ok(&["inspect-significance", "--model", "m/model.apct", "--cloud", cloud, "--out", "b.json"], t.path());
    assert_eq!(text, fs::read_to_string(t.path().join("b.json")).unwrap());

    ok(&["inspect-significance", "--model", "m/model.apct", "--cloud", cloud, "--out", "s.json", "--stage", "2"], t.path());
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(t.path().join("s.json")).unwrap()).unwrap();
    assert_eq!(v["stages"].as_array().unwrap().len(), 1);
    assert_eq!(v["stages"][0]["stage"], 2);
    fails_with(&["inspect-significance", "--model", "m/model.apct", "--cloud", cloud, "--out", "s.json", "--stage", "3"], t.path(), "config");
}

#[test]
fn gradcheck_passes_and_detects_a_broken_vjp() {
    let t = TempDir::new().unwrap();
    let out = ok(&["gradcheck"], t.path());
    let v: serde_json::Value = serde_json::from_str(out.trim()).unwrap();
    assert_eq!(v["passed"], true);
    assert!(v["checked"].as_u64().unwrap() >= 200);
    assert!(v["max_rel_err"].as_f64().unwrap() < 1e-4);
    assert!(v["seconds"].as_f64().unwrap() < 60.0);
    fails_with(&["gradcheck", "--fault-op", "softmax", "--fault-factor", "1.1"], t.path(), "gradcheck");
}

#[test]
fn help_documents_every_subcommand() {
    let t = TempDir::new().unwrap();
    let help = ok(&["--help"], t.path());
    for cmd in ["gen-dataset", "corrupt", "train", "eval", "report", "inspect-significance", "gradcheck"] {
        assert!(help.contains(cmd), "{cmd}");
    }
    let train = ok(&["train", "--help"], t.path());
    for flag in ["--config", "--data", "--out", "--no-drop", "--no-aux", "--seed"] {
        assert!(train.contains(flag), "{flag}");
    }
}
