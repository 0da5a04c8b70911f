use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::evaluate::evaluate_prepared;
use super::loss::total_loss_var;
use super::schedule::lr_at;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::geometry::PointCloud;
use crate::model::{argmax, forward, prepare, ForwardOptions, MaskSource, ModelConfig, ModelParams, PreparedCloud};
use crate::rng::{self, StreamKey};
use crate::tensor::{AdamW, AdamWState, Tape, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub warmup_epochs: usize,
    pub min_lr: f64,
    /// Weight of the auxiliary losses.
    pub lambda: f64,
    pub seed: u64,
    /// Adversarial key dropping.
    pub drop: bool,
    /// Auxiliary heads and their loss.
    pub aux: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 16,
            lr: 5e-4,
            weight_decay: 0.05,
            warmup_epochs: 3,
            min_lr: 1e-6,
            lambda: 1.0,
            seed: 0,
            drop: true,
            aux: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive".into());
        }
        if self.warmup_epochs >= self.epochs {
            return bad(format!("warmup_epochs {} must be below epochs {}", self.warmup_epochs, self.epochs));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.min_lr > 0.0 && self.min_lr <= self.lr) {
            return bad(format!("need 0 < min_lr <= lr, got {} and {}", self.min_lr, self.lr));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay {} must be non-negative", self.weight_decay));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda {} must be non-negative", self.lambda));
        }
        Ok(())
    }

    pub fn forward_options(&self) -> ForwardOptions {
        ForwardOptions::train(self.drop, self.aux)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    /// Clean accuracy on the held-out split, when one was given.
    pub eval_acc: Option<f64>,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    /// Same losses, accuracies, and rates epoch by epoch; timings ignored.
    pub fn same_trajectory(&self, other: &TrainLog) -> bool {
        self.epochs.len() == other.epochs.len()
            && self.epochs.iter().zip(&other.epochs).all(|(a, b)| {
                a.epoch == b.epoch
                    && a.train_loss.to_bits() == b.train_loss.to_bits()
                    && a.train_acc == b.train_acc
                    && a.eval_acc == b.eval_acc
                    && a.lr == b.lr
            })
    }

    /// One JSON object per line.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.epochs {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let epochs = text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect::<Result<_, _>>()?;
        Ok(TrainLog { epochs })
    }
}

/// Loss, correctness, and gradients of one sample.
pub struct SampleStep {
    pub loss: f64,
    pub correct: bool,
    pub grads: Vec<Tensor<f32>>,
}

/// Train-mode forward and backward of one sample on a private tape.
pub fn sample_step(
    params: &ModelParams<f32>,
    input: &PreparedCloud<f32>,
    cfg: &TrainConfig,
    mask_key: StreamKey,
) -> Result<SampleStep> {
    let mut rng = mask_key.rng();
    let mut tape = Tape::new();
    let out = forward(&mut tape, params, input, cfg.forward_options(), MaskSource::Sample(&mut rng))?;
    let label = input.label as usize;
    let loss = if cfg.aux {
        total_loss_var(&mut tape, out.logits, &out.aux_probs, label, cfg.lambda)?
    } else {
        tape.cross_entropy(out.logits, &[label])?
    };
    let correct = argmax(tape.value(out.logits).data()) == label;
    let loss_value = tape.value(loss).item() as f64;
    let mut g = tape.backward(loss)?;
    let grads = out
        .params
        .iter()
        .zip(params.tensors())
        .map(|(&v, t)| g.take(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    Ok(SampleStep { loss: loss_value, correct, grads })
}

/// Mean of per-sample gradients, reduced in sample order.
pub fn mean_grads(steps: &[SampleStep]) -> Vec<Tensor<f32>> {
    let mut acc: Vec<Tensor<f32>> = steps[0].grads.clone();
    for s in &steps[1..] {
        for (a, g) in acc.iter_mut().zip(&s.grads) {
            for (x, y) in a.data_mut().iter_mut().zip(g.data()) {
                *x += *y;
            }
        }
    }
    let inv = 1.0 / steps.len() as f32;
    for a in &mut acc {
        a.data_mut().iter_mut().for_each(|x| *x *= inv);
    }
    acc
}

pub type Progress<'p> = &'p (dyn Fn(&EpochRecord) + Sync);

/// Mini-batch AdamW training from a seeded initialization.
///
/// Every random choice (initialization, batch order, key masks) derives from
/// `cfg.seed`, so repeated runs produce the same parameters and log under
/// either execution mode.
pub fn train(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    train_set: &[PointCloud],
    eval_set: Option<&[PointCloud]>,
    exec: Exec,
    progress: Option<Progress<'_>>,
) -> Result<(ModelParams<f32>, TrainLog)> {
    model_cfg.validate()?;
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    if let Some(pc) = train_set.iter().find(|pc| pc.label as usize >= model_cfg.classes) {
        return Err(Error::Class(pc.label as usize));
    }
    let key = StreamKey::new(cfg.seed);
    let mut params = ModelParams::<f32>::init(model_cfg, key.with_str("init").seed())?;
    let prepared = exec.try_map(train_set, |pc| prepare::<f32>(pc, model_cfg))?;
    let eval_prepared = match eval_set {
        Some(set) => Some(exec.try_map(set, |pc| prepare::<f32>(pc, model_cfg))?),
        None => None,
    };

    let n = prepared.len();
    let per_epoch = n.div_ceil(cfg.batch_size);
    let total = per_epoch * cfg.epochs;
    let warmup = per_epoch * cfg.warmup_epochs;
    let opt = AdamW::default();
    let mut state = AdamWState::for_params(params.tensors());
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        rng::shuffle(&mut key.with_str("order").with(epoch as u64).rng(), &mut order);
        let (mut loss_sum, mut correct, mut lr) = (0.0, 0usize, 0.0);
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let step = epoch * per_epoch + b;
            let step_key = key.with_str("mask").with(step as u64);
            let steps = match exec.try_map(batch, |&i| sample_step(&params, &prepared[i], cfg, step_key.with(i as u64))) {
                Ok(s) => s,
                Err(Error::NumericFault { .. }) => {
                    return Err(Error::Diverged { epoch, step, checkpoint: Box::new(params) })
                }
                Err(e) => return Err(e),
            };
            let batch_loss = steps.iter().map(|s| s.loss).sum::<f64>();
            if !batch_loss.is_finite() {
                return Err(Error::Diverged { epoch, step, checkpoint: Box::new(params) });
            }
            loss_sum += batch_loss;
            correct += steps.iter().filter(|s| s.correct).count();
            let grads = mean_grads(&steps);
            lr = lr_at(step + 1, total, warmup, cfg.lr, cfg.min_lr)?;
            let names = params.names().to_vec();
            if let Err(e) = opt.step(params.tensors_mut(), &grads, &names, &mut state, lr, cfg.weight_decay) {
                return match e {
                    Error::NumericFault { .. } => Err(Error::Diverged { epoch, step, checkpoint: Box::new(params) }),
                    other => Err(other),
                };
            }
        }
        let eval_acc = match &eval_prepared {
            Some(set) => Some(evaluate_prepared(&params, set, exec)?.accuracy),
            None => None,
        };
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / n as f64,
            train_acc: correct as f64 / n as f64,
            eval_acc,
            lr,
            seconds: started.elapsed().as_secs_f64(),
        };
        if let Some(f) = progress {
            f(&record);
        }
        log.epochs.push(record);
    }
    Ok((params, log))
}
