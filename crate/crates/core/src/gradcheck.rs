//! Whole-model gradient check in 64-bit against central differences.
//!
//! Key masks are sampled once and replayed for every perturbed pass, so the
//! loss is a deterministic function of the parameters.

use std::time::Instant;

use serde::Serialize;

use crate::error::Result;
use crate::geometry::gen_shape;
use crate::model::{forward, prepare, ForwardOptions, MaskSource, ModelConfig, ModelParams, PreparedCloud};
use crate::rng::{self, StreamKey};
use crate::tensor::{OpKind, Tape, Tensor};
use crate::training::total_loss_var;

#[derive(Debug, Clone)]
pub struct GradcheckConfig {
    pub model: ModelConfig,
    pub seed: u64,
    /// Parameter entries to probe (at least one per tensor).
    pub samples: usize,
    pub step: f64,
    pub tolerance: f64,
    pub lambda: f64,
    /// Test hook: scale the vjp of one operation family.
    pub fault: Option<(OpKind, f64)>,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            model: ModelConfig::desk(),
            seed: 0,
            samples: 256,
            step: 1e-5,
            tolerance: 1e-4,
            lambda: 1.0,
            fault: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Probe {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub failures: usize,
    pub passed: bool,
    pub seconds: f64,
    pub worst: Option<Probe>,
}

/// `|a − n| / max(|a|, |n|, 1e-6)`
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

fn loss_with(
    params: &ModelParams<f64>,
    input: &PreparedCloud<f64>,
    masks: &[Option<Tensor<f64>>],
    lambda: f64,
) -> Result<f64> {
    let mut tape = Tape::new();
    let out = forward(&mut tape, params, input, ForwardOptions::train(true, true), MaskSource::Replay(masks))?;
    let loss = total_loss_var(&mut tape, out.logits, &out.aux_probs, input.label as usize, lambda)?;
    Ok(tape.value(loss).item())
}

pub fn gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let started = Instant::now();
    let key = StreamKey::new(cfg.seed).with_str("gradcheck");
    let mut params = ModelParams::<f64>::init(&cfg.model, key.with_str("init").seed())?;
    let class = rng::index(&mut key.with_str("class").rng(), cfg.model.classes.min(8));
    let cloud = gen_shape(class, key.with_str("cloud").seed(), 256.max(cfg.model.group_size.max(cfg.model.n_tokens)))?;
    let input = prepare::<f64>(&cloud, &cfg.model)?;

    let (masks, analytic) = {
        let mut rng = key.with_str("masks").rng();
        let mut tape = Tape::new();
        if let Some((kind, factor)) = cfg.fault {
            tape.inject_vjp_fault(kind, factor);
        }
        let out = forward(&mut tape, &params, &input, ForwardOptions::train(true, true), MaskSource::Sample(&mut rng))?;
        let loss = total_loss_var(&mut tape, out.logits, &out.aux_probs, input.label as usize, cfg.lambda)?;
        let g = tape.backward(loss)?;
        let analytic: Vec<Option<Tensor<f64>>> = out.params.iter().map(|&v| g.wrt(v).cloned()).collect();
        (out.masks, analytic)
    };

    let mut picks: Vec<(usize, usize)> = Vec::new();
    let sizes: Vec<usize> = params.tensors().iter().map(Tensor::numel).collect();
    let total: usize = sizes.iter().sum();
    let mut prng = key.with_str("picks").rng();
    for (t, &n) in sizes.iter().enumerate() {
        picks.push((t, rng::index(&mut prng, n)));
    }
    while picks.len() < cfg.samples {
        let mut flat = rng::index(&mut prng, total);
        let mut t = 0;
        while flat >= sizes[t] {
            flat -= sizes[t];
            t += 1;
        }
        picks.push((t, flat));
    }

    let mut worst: Option<Probe> = None;
    let mut failures = 0;
    for &(t, i) in &picks {
        let original = params.tensors()[t].data()[i];
        params.tensors_mut()[t].data_mut()[i] = original + cfg.step;
        let plus = loss_with(&params, &input, &masks, cfg.lambda)?;
        params.tensors_mut()[t].data_mut()[i] = original - cfg.step;
        let minus = loss_with(&params, &input, &masks, cfg.lambda)?;
        params.tensors_mut()[t].data_mut()[i] = original;
        let numeric = (plus - minus) / (2.0 * cfg.step);
        let a = analytic[t].as_ref().map_or(0.0, |g| g.data()[i]);
        let e = rel_err(a, numeric);
        if e >= cfg.tolerance {
            failures += 1;
        }
        if worst.as_ref().is_none_or(|w| e > w.rel_err) {
            worst = Some(Probe { param: params.names()[t].clone(), index: i, analytic: a, numeric, rel_err: e });
        }
    }
    let max_rel_err = worst.as_ref().map_or(0.0, |w| w.rel_err);
    Ok(GradcheckReport {
        checked: picks.len(),
        max_rel_err,
        failures,
        passed: failures == 0,
        seconds: started.elapsed().as_secs_f64(),
        worst,
    })
}
