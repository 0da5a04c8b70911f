//! Overall accuracy and corruption robustness scores against a reference model.
//!
//! CE sums errors over severities before taking the ratio; RCE does the same
//! with the clean-to-corrupted accuracy drop. mCE, RmCE, and mOA average over
//! corruption kinds (mOA over every cell).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corruption::{CorruptionKind, SeverityTable, SuiteManifest, SEVERITIES};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::geometry::{load_cloud, load_split, DatasetManifest};
use crate::model::ModelParams;
use crate::training::{accuracy_of, evaluate, read_predictions, write_predictions, Prediction};

pub const CLEAN_PREDICTIONS: &str = "clean.csv";

pub fn overall_accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    if preds.len() != labels.len() {
        return Err(Error::Contract(format!("{} predictions for {} labels", preds.len(), labels.len())));
    }
    if preds.is_empty() {
        return Err(Error::Contract("no predictions".into()));
    }
    Ok(preds.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / preds.len() as f64)
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Contract(format!("{} model values vs {} reference values", a.len(), b.len())));
    }
    Ok(())
}

/// `Σ_s (1 − OA_model[s]) / Σ_s (1 − OA_ref[s])`.
pub fn corruption_error(oa_model: &[f64], oa_ref: &[f64]) -> Result<f64> {
    check_pair(oa_model, oa_ref)?;
    let den: f64 = oa_ref.iter().map(|a| 1.0 - a).sum();
    if den <= 0.0 {
        return Err(Error::DegenerateReference("reference makes no errors".into()));
    }
    Ok(oa_model.iter().map(|a| 1.0 - a).sum::<f64>() / den)
}

/// `Σ_s (clean_model − OA_model[s]) / Σ_s (clean_ref − OA_ref[s])`.
pub fn relative_ce(clean_model: f64, oa_model: &[f64], clean_ref: f64, oa_ref: &[f64]) -> Result<f64> {
    check_pair(oa_model, oa_ref)?;
    let den: f64 = oa_ref.iter().map(|a| clean_ref - a).sum();
    if den == 0.0 {
        return Err(Error::DegenerateReference("reference accuracy does not degrade".into()));
    }
    Ok(oa_model.iter().map(|a| clean_model - a).sum::<f64>() / den)
}

fn mean(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::Contract("mean of nothing".into()));
    }
    Ok(v.iter().sum::<f64>() / v.len() as f64)
}

/// Mean of the per-kind corruption errors.
pub fn mce(ce: &[f64]) -> Result<f64> {
    mean(ce)
}

/// Mean of the per-kind relative corruption errors.
pub fn rmce(rce: &[f64]) -> Result<f64> {
    mean(rce)
}

/// Mean of every accuracy in the kind × severity grid.
pub fn moa(grid: &[Vec<f64>]) -> Result<f64> {
    let flat: Vec<f64> = grid.iter().flatten().copied().collect();
    mean(&flat)
}

/// Predictions of one model on the clean split and on every suite cell
/// (keyed by cell name such as `jitter_2`).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PredictionSet {
    pub clean: Vec<Prediction>,
    pub cells: BTreeMap<String, Vec<Prediction>>,
}

impl PredictionSet {
    /// Reads `clean.csv` plus every `<kind>_<severity>.csv` present in `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let clean = read_predictions(&dir.join(CLEAN_PREDICTIONS))?;
        let mut cells = BTreeMap::new();
        for kind in CorruptionKind::ALL {
            for s in 1..=SEVERITIES as u8 {
                let name = kind.cell_name(s);
                let path = dir.join(format!("{name}.csv"));
                if path.exists() {
                    cells.insert(name, read_predictions(&path)?);
                }
            }
        }
        Ok(PredictionSet { clean, cells })
    }

    /// Writes the layout read by [`PredictionSet::load_dir`].
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        write_predictions(&dir.join(CLEAN_PREDICTIONS), &self.clean)?;
        for (name, preds) in &self.cells {
            write_predictions(&dir.join(format!("{name}.csv")), preds)?;
        }
        Ok(())
    }

    /// Accuracy grid `[kind][severity - 1]`, `None` when a cell is missing.
    pub fn accuracy_grid(&self) -> Option<Vec<Vec<f64>>> {
        CorruptionKind::ALL
            .iter()
            .map(|k| (1..=SEVERITIES as u8).map(|s| self.cells.get(&k.cell_name(s)).map(|p| accuracy_of(p))).collect())
            .collect()
    }
}

/// Eval-mode predictions on the suite's clean source split and every cell.
pub fn evaluate_suite(params: &ModelParams<f32>, suite_root: &Path, exec: Exec) -> Result<PredictionSet> {
    let suite = SuiteManifest::load(suite_root)?;
    let dataset = DatasetManifest::load(&suite.dataset)?;
    let clean = evaluate(params, &load_split(&suite.dataset, &dataset, "test")?, exec)?.predictions;
    let mut cells = BTreeMap::new();
    for cell in &suite.cells {
        let dir = suite_root.join(&cell.dir);
        let clouds = exec.try_map(&cell.samples, |s| load_cloud(&dir.join(format!("{}.pcb", s.id))))?;
        cells.insert(cell.kind.cell_name(cell.severity), evaluate(params, &clouds, exec)?.predictions);
    }
    Ok(PredictionSet { clean, cells })
}

#[derive(Debug, Clone, PartialEq)]
pub struct KindMetrics {
    pub kind: CorruptionKind,
    /// Accuracy per severity 1..=5.
    pub model_oa: Vec<f64>,
    pub reference_oa: Vec<f64>,
    pub ce: f64,
    pub rce: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub model: String,
    pub reference: String,
    pub suite: String,
    pub clean_model_oa: f64,
    pub clean_reference_oa: f64,
    pub kinds: Vec<KindMetrics>,
    pub mce: f64,
    pub rmce: f64,
    pub moa: f64,
    pub severity_table: SeverityTable,
}

fn cell_accuracy(set: &PredictionSet, cell: &str, expected: usize, who: &str) -> Result<f64> {
    let preds = set
        .cells
        .get(cell)
        .ok_or_else(|| Error::Completeness(format!("{who} predictions missing for cell {cell}")))?;
    if preds.len() != expected {
        return Err(Error::Completeness(format!(
            "{who} cell {cell} has {} predictions, suite has {expected} samples",
            preds.len()
        )));
    }
    Ok(accuracy_of(preds))
}

pub fn build_report(
    model: &PredictionSet,
    reference: &PredictionSet,
    suite: &SuiteManifest,
    names: (&str, &str, &str),
) -> Result<MetricsReport> {
    if model.clean.is_empty() || reference.clean.is_empty() {
        return Err(Error::Completeness("clean predictions missing".into()));
    }
    let mut kinds = Vec::with_capacity(CorruptionKind::ALL.len());
    for kind in CorruptionKind::ALL {
        let mut model_oa = Vec::with_capacity(SEVERITIES);
        let mut reference_oa = Vec::with_capacity(SEVERITIES);
        for s in 1..=SEVERITIES as u8 {
            let name = kind.cell_name(s);
            let cell = suite
                .cell(kind, s)
                .ok_or_else(|| Error::Completeness(format!("suite has no cell {name}")))?;
            model_oa.push(cell_accuracy(model, &name, cell.samples.len(), "model")?);
            reference_oa.push(cell_accuracy(reference, &name, cell.samples.len(), "reference")?);
        }
        let clean_m = accuracy_of(&model.clean);
        let clean_r = accuracy_of(&reference.clean);
        let ce = corruption_error(&model_oa, &reference_oa)?;
        let rce = relative_ce(clean_m, &model_oa, clean_r, &reference_oa)?;
        kinds.push(KindMetrics { kind, model_oa, reference_oa, ce, rce });
    }
    let ces: Vec<f64> = kinds.iter().map(|k| k.ce).collect();
    let rces: Vec<f64> = kinds.iter().map(|k| k.rce).collect();
    let grid: Vec<Vec<f64>> = kinds.iter().map(|k| k.model_oa.clone()).collect();
    Ok(MetricsReport {
        model: names.0.to_string(),
        reference: names.1.to_string(),
        suite: names.2.to_string(),
        clean_model_oa: accuracy_of(&model.clean),
        clean_reference_oa: accuracy_of(&reference.clean),
        mce: mce(&ces)?,
        rmce: rmce(&rces)?,
        moa: moa(&grid)?,
        kinds,
        severity_table: suite.severity_table.clone(),
    })
}

fn pct(v: f64) -> f64 {
    (v * 1000.0).round() / 10.0
}

/// On-disk form: every accuracy and error ratio as a percentage with one decimal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReportDoc {
    model: String,
    reference: String,
    suite: String,
    clean_model_oa: f64,
    clean_reference_oa: f64,
    #[serde(rename = "mCE")]
    mce: f64,
    #[serde(rename = "RmCE")]
    rmce: f64,
    #[serde(rename = "mOA")]
    moa: f64,
    kinds: Vec<KindDoc>,
    severity_table: SeverityTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KindDoc {
    kind: CorruptionKind,
    model_oa: Vec<f64>,
    reference_oa: Vec<f64>,
    #[serde(rename = "CE")]
    ce: f64,
    #[serde(rename = "RCE")]
    rce: f64,
}

impl MetricsReport {
    pub fn to_text(&self) -> Result<String> {
        let doc = ReportDoc {
            model: self.model.clone(),
            reference: self.reference.clone(),
            suite: self.suite.clone(),
            clean_model_oa: pct(self.clean_model_oa),
            clean_reference_oa: pct(self.clean_reference_oa),
            mce: pct(self.mce),
            rmce: pct(self.rmce),
            moa: pct(self.moa),
            kinds: self
                .kinds
                .iter()
                .map(|k| KindDoc {
                    kind: k.kind,
                    model_oa: k.model_oa.iter().map(|&v| pct(v)).collect(),
                    reference_oa: k.reference_oa.iter().map(|&v| pct(v)).collect(),
                    ce: pct(k.ce),
                    rce: pct(k.rce),
                })
                .collect(),
            severity_table: self.severity_table.clone(),
        };
        let mut s = serde_json::to_string_pretty(&doc)?;
        s.push('\n');
        Ok(s)
    }

    /// Parses [`MetricsReport::to_text`] output; values come back at the
    /// stored one-decimal precision.
    pub fn from_text(text: &str) -> Result<Self> {
        let doc: ReportDoc = serde_json::from_str(text)?;
        let frac = |v: f64| v / 100.0;
        let kinds: Vec<KindMetrics> = doc
            .kinds
            .into_iter()
            .map(|k| KindMetrics {
                kind: k.kind,
                model_oa: k.model_oa.into_iter().map(frac).collect(),
                reference_oa: k.reference_oa.into_iter().map(frac).collect(),
                ce: frac(k.ce),
                rce: frac(k.rce),
            })
            .collect();
        let complete = kinds.len() == CorruptionKind::ALL.len()
            && CorruptionKind::ALL.iter().all(|&c| kinds.iter().filter(|k| k.kind == c).count() == 1)
            && kinds.iter().all(|k| k.model_oa.len() == SEVERITIES && k.reference_oa.len() == SEVERITIES);
        if !complete {
            return Err(Error::Completeness("report does not hold 7 kinds × 5 severities".into()));
        }
        Ok(MetricsReport {
            model: doc.model,
            reference: doc.reference,
            suite: doc.suite,
            clean_model_oa: frac(doc.clean_model_oa),
            clean_reference_oa: frac(doc.clean_reference_oa),
            kinds,
            mce: frac(doc.mce),
            rmce: frac(doc.rmce),
            moa: frac(doc.moa),
            severity_table: doc.severity_table,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_text()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}
