//! Per-token significance dump and a flat scatter rendering.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use apct_core::geometry::{load_cloud, load_cloud_text, PointCloud, CLOUD_MAGIC};
use apct_core::model::{argmax, forward, prepare, ForwardOptions, MaskSource, Mode, ModelParams, RatePolicy};
use apct_core::tensor::Tape;
use apct_core::Error;
use serde::Serialize;

use crate::commands::CliError;
use crate::InspectArgs;

#[derive(Debug, Serialize)]
pub struct TokenRecord {
    pub token: usize,
    pub center: [f32; 3],
    pub count: u32,
    pub rate: f64,
}

#[derive(Debug, Serialize)]
pub struct StageDump {
    pub stage: usize,
    pub k: usize,
    pub gamma: f64,
    pub alpha: f64,
    pub beta: f64,
    pub tokens: Vec<TokenRecord>,
}

#[derive(Debug, Serialize)]
pub struct SignificanceDump {
    pub cloud: String,
    pub label: u32,
    pub predicted: usize,
    pub stages: Vec<StageDump>,
}

fn read_cloud(path: &Path) -> Result<PointCloud, Error> {
    let head = fs::read(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
    if head.starts_with(CLOUD_MAGIC) {
        load_cloud(path)
    } else {
        load_cloud_text(path, 0)
    }
}

/// Eval-mode pass with the identifier switched on; no keys are dropped.
pub fn significance(params: &ModelParams<f32>, pc: &PointCloud, stage: Option<usize>) -> Result<SignificanceDump, Error> {
    let cfg = &params.config;
    if let Some(s) = stage.filter(|&s| s >= apct_core::model::STAGES) {
        return Err(Error::Config(format!("stage {s} outside 0..{}", apct_core::model::STAGES)));
    }
    let input = prepare::<f32>(pc, cfg)?;
    let mut tape = Tape::new();
    let opts = ForwardOptions { mode: Mode::Eval, drop: true, aux: false, rates: RatePolicy::Adaptive };
    let out = forward(&mut tape, params, &input, opts, MaskSource::None)?;
    let predicted = argmax(tape.value(out.logits).data());
    let centers = input.centers.data();
    let stages = out
        .significance
        .iter()
        .filter(|r| stage.is_none_or(|s| s == r.stage))
        .map(|r| StageDump {
            stage: r.stage,
            k: r.k,
            gamma: r.gamma,
            alpha: cfg.alpha,
            beta: cfg.beta,
            tokens: r
                .counts
                .iter()
                .zip(&r.rates)
                .enumerate()
                .map(|(i, (&count, &rate))| TokenRecord {
                    token: i,
                    center: [centers[i * 3], centers[i * 3 + 1], centers[i * 3 + 2]],
                    count,
                    rate,
                })
                .collect(),
        })
        .collect();
    Ok(SignificanceDump { cloud: pc.id.clone(), label: pc.label, predicted, stages })
}

const PANEL: f64 = 320.0;

/// Blue at α through red at β.
fn color(rate: f64, alpha: f64, beta: f64) -> String {
    let t = if beta > alpha { ((rate - alpha) / (beta - alpha)).clamp(0.0, 1.0) } else { 0.0 };
    let r = (40.0 + 215.0 * t).round() as u8;
    let b = (255.0 - 215.0 * t).round() as u8;
    format!("rgb({r},60,{b})")
}

/// Top view (x right, y up), one panel per stage, raw points in grey.
pub fn render_svg(pc: &PointCloud, stages: &[StageDump]) -> String {
    let extent = pc.points.iter().flat_map(|p| [p[0].abs(), p[1].abs()]).fold(1e-6f32, f32::max) as f64;
    let scale = (PANEL / 2.0 - 12.0) / extent;
    let width = PANEL * stages.len().max(1) as f64;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{h}" viewBox="0 0 {width} {h}">"#,
        h = PANEL + 20.0
    );
    for (p, st) in stages.iter().enumerate() {
        let ox = PANEL * p as f64 + PANEL / 2.0;
        let oy = PANEL / 2.0 + 20.0;
        let _ = writeln!(s, r#"<text x="{}" y="14" font-family="sans-serif" font-size="12">stage {}</text>"#, PANEL * p as f64 + 6.0, st.stage);
        for q in &pc.points {
            let _ = writeln!(
                s,
                r##"<circle cx="{:.2}" cy="{:.2}" r="1" fill="#bbbbbb"/>"##,
                ox + q[0] as f64 * scale,
                oy - q[1] as f64 * scale
            );
        }
        for t in &st.tokens {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="{:.1}" fill="{}" fill-opacity="0.85"><title>token {} count {} rate {:.3}</title></circle>"#,
                ox + t.center[0] as f64 * scale,
                oy - t.center[1] as f64 * scale,
                3.0 + (t.count as f64).sqrt(),
                color(t.rate, st.alpha, st.beta),
                t.token,
                t.count,
                t.rate
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

pub fn run(a: InspectArgs) -> Result<(), CliError> {
    let params = ModelParams::<f32>::load(&a.model)?;
    let pc = read_cloud(&a.cloud)?;
    let dump = significance(&params, &pc, a.stage)?;
    let text = serde_json::to_string_pretty(&dump).map_err(Error::from)?;
    fs::write(&a.out, text + "\n").map_err(|e| Error::Io { path: a.out.clone(), source: e })?;
    if let Some(svg) = &a.svg {
        let body = render_svg(&pc, &dump.stages);
        fs::write(svg, body).map_err(|e| Error::Io { path: svg.clone(), source: e })?;
    }
    for st in &dump.stages {
        let total: u32 = st.tokens.iter().map(|t| t.count).sum();
        println!("stage {} counts={total} predicted={}", st.stage, dump.predicted);
    }
    Ok(())
}
