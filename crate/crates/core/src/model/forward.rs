//! Tokenizer, positional embedding, attention blocks, heads, and the full
//! three-stage forward pass recorded on a [`Tape`].

use super::config::{ModelConfig, STAGES};
use super::params::{ModelParams, PER_BLOCK};
use crate::adversarial::{identify, sample_drop_entries, SignificanceRecord};
use crate::error::{Error, Result};
use crate::geometry::{fps, knn_group, Point, PointCloud};
use crate::rng::{self, Rng};
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Patch geometry of one cloud: FPS centers and center-relative kNN groups.
///
/// Depends only on the point set and the config, so it can be computed once
/// per cloud and reused across epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedCloud<T> {
    /// `n × 3`
    pub centers: Tensor<T>,
    /// `(n·g) × 3`, group `i` occupying rows `i·g .. (i+1)·g`.
    pub groups: Tensor<T>,
    pub label: u32,
    pub id: String,
}

/// Lexicographic sort followed by a seeded shuffle: the result depends on the
/// point set and seed only, never on the input order.
pub fn canonical_order(points: &[Point], seed: u64) -> Vec<Point> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])).then(a[2].total_cmp(&b[2])));
    rng::shuffle(&mut rng::rng_from_seed(seed), &mut pts);
    pts
}

pub fn prepare<T: Scalar>(pc: &PointCloud, cfg: &ModelConfig) -> Result<PreparedCloud<T>> {
    let need = cfg.group_size.max(cfg.n_tokens);
    if pc.len() < need {
        return Err(Error::Count { requested: need, available: pc.len() });
    }
    let pts = canonical_order(&pc.points, cfg.tokenizer_seed);
    let idx = fps(&pts, cfg.n_tokens, 0)?;
    let centers: Vec<Point> = idx.iter().map(|&i| pts[i]).collect();
    let patches = knn_group(&pts, &centers, cfg.group_size)?;
    let mut groups = Vec::with_capacity(cfg.n_tokens * cfg.group_size * 3);
    for (c, members) in centers.iter().zip(&patches.member_indices) {
        for &m in members {
            groups.extend((0..3).map(|a| T::of(pts[m][a] as f64 - c[a] as f64)));
        }
    }
    let flat: Vec<T> = centers.iter().flatten().map(|&v| T::of(v as f64)).collect();
    Ok(PreparedCloud {
        centers: Tensor::new(vec![cfg.n_tokens, 3], flat)?,
        groups: Tensor::new(vec![cfg.n_tokens * cfg.group_size, 3], groups)?,
        label: pc.label,
        id: pc.id.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Where per-token drop rates come from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RatePolicy {
    /// Identifier output for the stage.
    Adaptive,
    /// The same rate for every key.
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardOptions {
    pub mode: Mode,
    /// Adversarial key dropping (identifier plus masks).
    pub drop: bool,
    /// Auxiliary heads.
    pub aux: bool,
    pub rates: RatePolicy,
}

impl ForwardOptions {
    pub fn eval() -> Self {
        ForwardOptions { mode: Mode::Eval, drop: false, aux: false, rates: RatePolicy::Adaptive }
    }

    pub fn train(drop: bool, aux: bool) -> Self {
        ForwardOptions { mode: Mode::Train, drop, aux, rates: RatePolicy::Adaptive }
    }

    fn masks_active(&self, cfg: &ModelConfig) -> bool {
        self.drop && (self.mode == Mode::Train || cfg.drop_at_inference)
    }
}

/// Source of the per-block key masks.
pub enum MaskSource<'r, T> {
    None,
    Sample(&'r mut Rng),
    /// Masks recorded by an earlier pass, one entry per block in order.
    Replay(&'r [Option<Tensor<T>>]),
}

pub struct ForwardOutput<T> {
    /// Parameter leaves, in [`ModelParams::tensors`] order.
    pub params: Vec<Var>,
    /// `1 × classes`
    pub logits: Var,
    /// `1 × classes` probabilities for stages `0..STAGES - 1` (empty without aux).
    pub aux_probs: Vec<Var>,
    /// One record per stage (empty without drop).
    pub significance: Vec<SignificanceRecord>,
    /// Mask used by each block, `None` when unmasked.
    pub masks: Vec<Option<Tensor<T>>>,
}

fn linear<T: Scalar>(tape: &mut Tape<'_, T>, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = tape.matmul(x, w)?;
    tape.add_row(y, b)
}

/// Shared per-point MLP (3 → C/2 → C) over center-relative groups, then a
/// max-pool per group. `w` = fc1 weight, fc1 bias, fc2 weight, fc2 bias.
pub fn tokenize<T: Scalar>(tape: &mut Tape<'_, T>, w: &[Var], groups: Var, group_size: usize) -> Result<Var> {
    let h = linear(tape, groups, w[0], w[1])?;
    let h = tape.gelu(h);
    let f = linear(tape, h, w[2], w[3])?;
    tape.group_max(f, group_size)
}

/// Two-layer MLP on patch centers.
pub fn pos_embed<T: Scalar>(tape: &mut Tape<'_, T>, w: &[Var], centers: Var) -> Result<Var> {
    let h = linear(tape, centers, w[0], w[1])?;
    let h = tape.gelu(h);
    linear(tape, h, w[2], w[3])
}

/// Pre-norm block with multi-head attention under an optional additive
/// `{0, -inf}` key mask shared by all heads.
pub fn attention_block<T: Scalar>(
    tape: &mut Tape<'_, T>,
    w: &[Var],
    x: Var,
    pe: Var,
    mask: Option<&Tensor<T>>,
    heads: usize,
) -> Result<Var> {
    attention_block_traced(tape, w, x, pe, mask, heads).map(|(out, _)| out)
}

/// [`attention_block`] also returning each head's attention weights.
pub fn attention_block_traced<T: Scalar>(
    tape: &mut Tape<'_, T>,
    w: &[Var],
    x: Var,
    pe: Var,
    mask: Option<&Tensor<T>>,
    heads: usize,
) -> Result<(Var, Vec<Var>)> {
    let x = tape.add(x, pe)?;
    let h = tape.layer_norm(x, w[0], w[1])?;
    let q = tape.matmul(h, w[2])?;
    let k = tape.matmul(h, w[3])?;
    let v = tape.matmul(h, w[4])?;
    let c = tape.value(x).cols();
    let d = c / heads;
    let scale = 1.0 / (d as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    let mut weights = Vec::with_capacity(heads);
    for i in 0..heads {
        let qh = tape.slice_cols(q, i * d, d)?;
        let kh = tape.slice_cols(k, i * d, d)?;
        let vh = tape.slice_cols(v, i * d, d)?;
        let logits = tape.matmul_nt(qh, kh)?;
        let logits = tape.scale(logits, T::of(scale));
        let attn = tape.softmax(logits, mask)?;
        weights.push(attn);
        outs.push(tape.matmul(attn, vh)?);
    }
    let o = if heads == 1 { outs[0] } else { tape.concat_cols(&outs)? };
    let o = linear(tape, o, w[5], w[6])?;
    let x = tape.add(x, o)?;
    let h = tape.layer_norm(x, w[7], w[8])?;
    let h = linear(tape, h, w[9], w[10])?;
    let h = tape.gelu(h);
    let h = linear(tape, h, w[11], w[12])?;
    Ok((tape.add(x, h)?, weights))
}

/// Channel-wise max-pool, linear map, softmax.
pub fn aux_head<T: Scalar>(tape: &mut Tape<'_, T>, w: &[Var], x: Var) -> Result<Var> {
    let pooled = tape.col_max(x)?;
    let z = linear(tape, pooled, w[0], w[1])?;
    tape.softmax(z, None)
}

/// Full pass over one prepared cloud.
pub fn forward<'a, T: Scalar>(
    tape: &mut Tape<'a, T>,
    params: &'a ModelParams<T>,
    input: &'a PreparedCloud<T>,
    opts: ForwardOptions,
    mut masks: MaskSource<'_, T>,
) -> Result<ForwardOutput<T>> {
    let cfg = &params.config;
    let lay = params.layout();
    let p: Vec<Var> = params.tensors().iter().map(|t| tape.leaf(t)).collect();
    let groups = tape.leaf(&input.groups);
    let centers = tape.leaf(&input.centers);

    let mut x = tokenize(tape, &p[lay.tokenizer..lay.tokenizer + 4], groups, cfg.group_size)?;
    tape.check_finite(x, "tokenizer")?;
    let pe = pos_embed(tape, &p[lay.pos..lay.pos + 4], centers)?;
    tape.check_finite(pe, "pos")?;

    let use_masks = opts.masks_active(cfg);
    let mut aux_probs = Vec::new();
    let mut significance = Vec::new();
    let mut used_masks = Vec::with_capacity(cfg.blocks());
    let mut block_index = 0;
    for s in 0..STAGES {
        let mut rates = None;
        if opts.drop {
            let record = identify(tape.value(x), s, cfg.k, cfg.gamma[s], cfg.alpha, cfg.beta)?;
            rates = Some(match opts.rates {
                RatePolicy::Adaptive => record.rates.clone(),
                RatePolicy::Fixed(r) => vec![r; cfg.n_tokens],
            });
            significance.push(record);
        }
        if opts.aux && s < STAGES - 1 {
            let probs = aux_head(tape, &p[lay.aux[s]..lay.aux[s] + 2], x)?;
            tape.check_finite(probs, &format!("aux{s}"))?;
            aux_probs.push(probs);
        }
        for (b, &base) in lay.blocks[s].iter().enumerate() {
            let mask = match (&rates, use_masks) {
                (Some(r), true) => Some(next_mask(&mut masks, r, cfg.n_tokens, block_index)?),
                _ => None,
            };
            x = attention_block(tape, &p[base..base + PER_BLOCK], x, pe, mask.as_ref(), cfg.heads)?;
            tape.check_finite(x, &format!("stage{s}.block{b}"))?;
            used_masks.push(mask);
            block_index += 1;
        }
    }

    let h = tape.layer_norm(x, p[lay.norm], p[lay.norm + 1])?;
    let pooled = tape.col_max(h)?;
    let h = linear(tape, pooled, p[lay.head], p[lay.head + 1])?;
    let h = tape.gelu(h);
    let logits = linear(tape, h, p[lay.head + 2], p[lay.head + 3])?;
    tape.check_finite(logits, "head")?;
    Ok(ForwardOutput { params: p, logits, aux_probs, significance, masks: used_masks })
}

fn next_mask<T: Scalar>(src: &mut MaskSource<'_, T>, rates: &[f64], n: usize, block: usize) -> Result<Tensor<T>> {
    match src {
        MaskSource::Sample(rng) => sample_drop_entries(rates, n, rng),
        MaskSource::Replay(list) => match list.get(block) {
            Some(Some(m)) if m.shape() == [n, n] => Ok(m.clone()),
            _ => Err(Error::Contract(format!("no recorded {n}×{n} mask for block {block}"))),
        },
        MaskSource::None => Err(Error::Contract("key masks requested without a mask source".into())),
    }
}

/// Eval-mode logits of one cloud.
pub fn predict<T: Scalar>(params: &ModelParams<T>, input: &PreparedCloud<T>) -> Result<Vec<T>> {
    let mut tape = Tape::new();
    let out = forward(&mut tape, params, input, ForwardOptions::eval(), MaskSource::None)?;
    Ok(tape.value(out.logits).data().to_vec())
}

/// Index of the largest logit; ties go to the smaller class.
pub fn argmax<T: Scalar>(logits: &[T]) -> usize {
    logits.iter().enumerate().fold(0, |best, (i, &v)| if v > logits[best] { i } else { best })
}
