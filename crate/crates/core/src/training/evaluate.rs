//! Eval-mode prediction and the `id,pred,label` prediction file.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::geometry::PointCloud;
use crate::model::{argmax, predict, prepare, ModelParams, PreparedCloud};

pub const PREDICTION_HEADER: &str = "id,pred,label";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prediction {
    pub id: String,
    pub pred: usize,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub predictions: Vec<Prediction>,
    pub accuracy: f64,
}

pub fn evaluate(params: &ModelParams<f32>, clouds: &[PointCloud], exec: Exec) -> Result<EvalResult> {
    let prepared = exec.try_map(clouds, |pc| prepare::<f32>(pc, &params.config))?;
    evaluate_prepared(params, &prepared, exec)
}

pub fn evaluate_prepared(params: &ModelParams<f32>, inputs: &[PreparedCloud<f32>], exec: Exec) -> Result<EvalResult> {
    let predictions = exec.try_map(inputs, |input| {
        let logits = predict(params, input)?;
        Ok::<_, Error>(Prediction { id: input.id.clone(), pred: argmax(&logits), label: input.label as usize })
    })?;
    let accuracy = accuracy_of(&predictions);
    Ok(EvalResult { predictions, accuracy })
}

pub fn accuracy_of(predictions: &[Prediction]) -> f64 {
    if predictions.is_empty() {
        return 0.0;
    }
    predictions.iter().filter(|p| p.pred == p.label).count() as f64 / predictions.len() as f64
}

pub fn format_predictions(predictions: &[Prediction]) -> String {
    let mut out = String::from(PREDICTION_HEADER);
    out.push('\n');
    for p in predictions {
        let _ = writeln!(out, "{},{},{}", p.id, p.pred, p.label);
    }
    out
}

pub fn parse_predictions(text: &str, path: &Path) -> Result<Vec<Prediction>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(PREDICTION_HEADER) {
        return Err(Error::format(path, format!("missing `{PREDICTION_HEADER}` header")));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let fields: Vec<&str> = line.trim().split(',').collect();
            let bad = || Error::format(path, format!("malformed record on line {}", i + 2));
            match fields.as_slice() {
                [id, pred, label] => Ok(Prediction {
                    id: id.to_string(),
                    pred: pred.parse().map_err(|_| bad())?,
                    label: label.parse().map_err(|_| bad())?,
                }),
                _ => Err(bad()),
            }
        })
        .collect()
}

pub fn write_predictions(path: &Path, predictions: &[Prediction]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, format_predictions(predictions)).map_err(|e| Error::io(path, e))
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_predictions(&text, path)
}
