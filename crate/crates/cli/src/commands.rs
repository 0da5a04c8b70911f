use std::fs;
use std::path::{Path, PathBuf};

use apct_core::corruption::{build_suite, CorruptionKind, SuiteManifest};
use apct_core::exec::Exec;
use apct_core::geometry::{generate_dataset, load_cloud, load_split, DatasetManifest};
use apct_core::gradcheck::{gradcheck as run_gradcheck, GradcheckConfig};
use apct_core::metrics::{build_report, evaluate_suite, PredictionSet};
use apct_core::model::ModelParams;
use apct_core::tensor::OpKind;
use apct_core::training::{self, evaluate, write_predictions, EpochRecord};
use apct_core::Error;

use crate::config::RunConfig;
use crate::{CorruptArgs, EvalArgs, FaultOp, GenDatasetArgs, GradcheckArgs, ReportArgs, TrainArgs};

pub const MODEL_FILE: &str = "model.apct";
pub const LOG_FILE: &str = "train_log.jsonl";
pub const RESOLVED_CONFIG: &str = "config.toml";
pub const CHECKPOINT_FILE: &str = "checkpoint.apct";

#[derive(Debug)]
pub struct CliError {
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    pub fn new(kind: &'static str, message: impl Into<String>) -> Self {
        CliError { kind, message: message.into() }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError { kind: e.kind(), message: e.to_string() }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    Error::Io { path: path.to_path_buf(), source: e }.into()
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    Ok(match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    })
}

fn is_non_empty_dir(path: &Path) -> Result<bool> {
    match fs::read_dir(path) {
        Ok(mut it) => Ok(it.next().is_some()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(false),
        Err(e) => Err(io_err(path, e)),
    }
}

pub fn gen_dataset(a: GenDatasetArgs, exec: Exec) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?.dataset;
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    cfg.train_per_class = a.train_per_class.unwrap_or(cfg.train_per_class);
    cfg.test_per_class = a.test_per_class.unwrap_or(cfg.test_per_class);
    cfg.points = a.points.unwrap_or(cfg.points);
    cfg.validate()?;
    if !a.force && is_non_empty_dir(&a.out)? {
        return Err(CliError::new("exists", format!("{} is not empty; pass --force to write into it", a.out.display())));
    }
    generate_dataset(&a.out, &cfg, exec)?;
    println!("{}", a.out.join(apct_core::geometry::MANIFEST_FILE).display());
    Ok(())
}

pub fn corrupt(a: CorruptArgs, exec: Exec) -> Result<()> {
    let seed = a.seed.unwrap_or(load_config(a.config.as_deref())?.suite.seed);
    let cells = match (&a.kind, a.severity) {
        (Some(k), Some(s)) => Some(vec![(k.parse::<CorruptionKind>()?, s)]),
        _ => None,
    };
    let data = fs::canonicalize(&a.data).map_err(|e| io_err(&a.data, e))?;
    let suite = build_suite(&data, seed, &a.out, cells.as_deref(), exec)?;
    for c in &suite.cells {
        println!("{}", a.out.join(&c.dir).display());
    }
    Ok(())
}

pub fn train(a: TrainArgs, exec: Exec) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    if a.no_drop {
        cfg.train.drop = false;
    }
    if a.no_aux {
        cfg.train.aux = false;
    }
    cfg.train.seed = a.seed.unwrap_or(cfg.train.seed);
    cfg.train.epochs = a.epochs.unwrap_or(cfg.train.epochs);
    cfg.validate()?;

    let manifest = DatasetManifest::load(&a.data)?;
    let train_set = load_split(&a.data, &manifest, "train")?;
    let test_set = if a.no_eval { None } else { Some(load_split(&a.data, &manifest, "test")?) };

    fs::create_dir_all(&a.out).map_err(|e| io_err(&a.out, e))?;
    write_text(&a.out.join(RESOLVED_CONFIG), &cfg.to_toml()?)?;
    let progress = |r: &EpochRecord| {
        let eval = r.eval_acc.map_or(String::new(), |v| format!(" eval_acc={v:.4}"));
        eprintln!(
            "epoch {:>3} loss={:.4} train_acc={:.4}{eval} lr={:.3e} ({:.1}s)",
            r.epoch, r.train_loss, r.train_acc, r.lr, r.seconds
        );
    };
    let result = training::train(&cfg.model, &cfg.train, &train_set, test_set.as_deref(), exec, Some(&progress));
    let (params, log) = match result {
        Ok(v) => v,
        Err(Error::Diverged { epoch, step, checkpoint }) => {
            let path = a.out.join(CHECKPOINT_FILE);
            checkpoint.save(&path)?;
            return Err(CliError::new(
                "diverged",
                format!("non-finite loss at epoch {epoch}, step {step}; last good parameters in {}", path.display()),
            ));
        }
        Err(e) => return Err(e.into()),
    };
    let model_path = a.out.join(MODEL_FILE);
    params.save(&model_path)?;
    write_text(&a.out.join(LOG_FILE), &log.to_jsonl()?)?;
    let last = log.epochs.last().expect("at least one epoch");
    match last.eval_acc {
        Some(acc) => println!("{} accuracy={acc:.4}", model_path.display()),
        None => println!("{}", model_path.display()),
    }
    Ok(())
}

fn cell_clouds(dir: &Path, exec: Exec) -> Result<Vec<apct_core::geometry::PointCloud>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "pcb"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::new("count", format!("no .pcb files in {}", dir.display())));
    }
    Ok(exec.try_map(&files, |p| load_cloud(p))?)
}

pub fn eval(a: EvalArgs, exec: Exec) -> Result<()> {
    let params = ModelParams::<f32>::load(&a.model)?;
    if let Some(suite) = &a.suite {
        let set = evaluate_suite(&params, suite, exec)?;
        fs::create_dir_all(&a.pred_out).map_err(|e| io_err(&a.pred_out, e))?;
        set.save_dir(&a.pred_out)?;
        println!("clean accuracy={:.4}", training::accuracy_of(&set.clean));
        for (name, preds) in &set.cells {
            println!("{name} accuracy={:.4}", training::accuracy_of(preds));
        }
        return Ok(());
    }
    let clouds = match (&a.data, &a.suite_cell) {
        (Some(root), _) => load_split(root, &DatasetManifest::load(root)?, &a.split)?,
        (None, Some(dir)) => cell_clouds(dir, exec)?,
        (None, None) => unreachable!("clap requires a source"),
    };
    let result = evaluate(&params, &clouds, exec)?;
    write_predictions(&a.pred_out, &result.predictions)?;
    println!("accuracy={:.4}", result.accuracy);
    Ok(())
}

pub fn report(a: ReportArgs) -> Result<()> {
    let suite = SuiteManifest::load(&a.suite)?;
    let model = PredictionSet::load_dir(&a.model_preds_dir)?;
    let reference = PredictionSet::load_dir(&a.ref_preds_dir)?;
    let names = (
        a.model_preds_dir.display().to_string(),
        a.ref_preds_dir.display().to_string(),
        a.suite.display().to_string(),
    );
    let report = build_report(&model, &reference, &suite, (&names.0, &names.1, &names.2))?;
    report.save(&a.out)?;
    println!(
        "mCE={:.1} RmCE={:.1} mOA={:.1}",
        report.mce * 100.0,
        report.rmce * 100.0,
        report.moa * 100.0
    );
    Ok(())
}

fn op_kind(op: FaultOp) -> OpKind {
    match op {
        FaultOp::Matmul => OpKind::MatMul,
        FaultOp::Softmax => OpKind::Softmax,
        FaultOp::Gelu => OpKind::Gelu,
        FaultOp::LayerNorm => OpKind::LayerNorm,
        FaultOp::AddRow => OpKind::AddRow,
        FaultOp::GroupMax => OpKind::GroupMax,
        FaultOp::ColMax => OpKind::ColMax,
    }
}

pub fn gradcheck(a: GradcheckArgs) -> Result<()> {
    let cfg = GradcheckConfig {
        seed: a.seed,
        samples: a.samples,
        step: a.step,
        tolerance: a.tolerance,
        fault: a.fault_op.zip(a.fault_factor).map(|(op, f)| (op_kind(op), f)),
        ..GradcheckConfig::default()
    };
    let report = run_gradcheck(&cfg)?;
    println!("{}", serde_json::to_string(&report).map_err(Error::from)?);
    if report.passed {
        Ok(())
    } else {
        Err(CliError::new(
            "gradcheck",
            format!(
                "{} of {} probes above relative tolerance {:e}; max relative error {:.3e}",
                report.failures, report.checked, a.tolerance, report.max_rel_err
            ),
        ))
    }
}
