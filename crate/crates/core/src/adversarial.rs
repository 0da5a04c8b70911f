//! Adversarial significance identification.
//!
//! For every feature channel the `k` tokens with the largest response form an
//! index bank; counting how often each token appears there gives its
//! significance, which a clamped linear map turns into a per-token key drop
//! rate. Frequently dominant tokens are dropped more often during training.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::tensor::{Scalar, Tensor};

/// `k × C` token indices; column `m` lists channel `m`'s top-k tokens in
/// descending response order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexBank {
    k: usize,
    channels: usize,
    indices: Vec<usize>,
}

impl IndexBank {
    pub fn from_rows(k: usize, channels: usize, indices: Vec<usize>) -> Result<Self> {
        if indices.len() != k * channels {
            return Err(Error::Shape(format!("{} indices for a {k}×{channels} bank", indices.len())));
        }
        Ok(IndexBank { k, channels, indices })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn get(&self, rank: usize, channel: usize) -> usize {
        self.indices[rank * self.channels + channel]
    }

    pub fn column(&self, channel: usize) -> Vec<usize> {
        (0..self.k).map(|r| self.get(r, channel)).collect()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.indices
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceRecord {
    pub stage: usize,
    pub k: usize,
    pub gamma: f64,
    pub counts: Vec<u32>,
    pub rates: Vec<f64>,
}

/// Per-channel top-k token indices of an `n × C` feature matrix.
///
/// Ties go to the smaller token index.
pub fn topk_index_bank<T: Scalar>(features: &Tensor<T>, k: usize) -> Result<IndexBank> {
    let (n, c) = (features.rows(), features.cols());
    if k == 0 || k > n {
        return Err(Error::Count { requested: k, available: n });
    }
    let data = features.data();
    let mut indices = vec![0usize; k * c];
    let mut order: Vec<usize> = Vec::with_capacity(n);
    for m in 0..c {
        order.clear();
        order.extend(0..n);
        // stable sort keeps ascending index order among equal values
        order.sort_by(|&a, &b| data[b * c + m].partial_cmp(&data[a * c + m]).unwrap_or(std::cmp::Ordering::Equal));
        for r in 0..k {
            indices[r * c + m] = order[r];
        }
    }
    Ok(IndexBank { k, channels: c, indices })
}

/// Occurrences of each token index in the bank.
pub fn significance_counts(bank: &IndexBank, n: usize) -> Result<Vec<u32>> {
    let mut counts = vec![0u32; n];
    for &i in bank.as_slice() {
        *counts
            .get_mut(i)
            .ok_or_else(|| Error::Contract(format!("token index {i} outside {n} tokens")))? += 1;
    }
    Ok(counts)
}

/// `rate_j = clamp(gamma · n · m_j / Σm, alpha, beta)`.
pub fn map_to_rates(m: &[f64], gamma: f64, alpha: f64, beta: f64) -> Result<Vec<f64>> {
    let total: f64 = m.iter().sum();
    if total.is_nan() || total <= 0.0 || m.iter().any(|&v| v < 0.0) {
        return Err(Error::Contract("significance must be non-negative with a positive sum".into()));
    }
    if alpha.is_nan() || beta.is_nan() || alpha > beta {
        return Err(Error::Contract(format!("clamp bounds {alpha} > {beta}")));
    }
    let n = m.len() as f64;
    Ok(m.iter()
        .map(|&mj| {
            let raw = gamma * n * mj / total;
            if raw < alpha {
                alpha
            } else if raw > beta {
                beta
            } else {
                raw
            }
        })
        .collect())
}

/// The whole identifier for one stage's input tokens.
pub fn identify<T: Scalar>(
    features: &Tensor<T>,
    stage: usize,
    k: usize,
    gamma: f64,
    alpha: f64,
    beta: f64,
) -> Result<SignificanceRecord> {
    let n = features.rows();
    let bank = topk_index_bank(features, k)?;
    let counts = significance_counts(&bank, n)?;
    let m: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    let rates = map_to_rates(&m, gamma, alpha, beta)?;
    Ok(SignificanceRecord { stage, k, gamma, counts, rates })
}

/// Independent Bernoulli key drops: entry `(q, j)` is `true` with
/// probability `rates[j]`. Rows may come out fully dropped.
pub fn sample_key_drops(rates: &[f64], n_queries: usize, rng: &mut Rng) -> Result<Vec<bool>> {
    if let Some(bad) = rates.iter().find(|r| !(0.0..=1.0).contains(*r)) {
        return Err(Error::Contract(format!("drop rate {bad} outside [0, 1]")));
    }
    if rates.is_empty() {
        return Err(Error::Contract("no keys to mask".into()));
    }
    let mut drops = Vec::with_capacity(n_queries * rates.len());
    for _ in 0..n_queries {
        drops.extend(rates.iter().map(|&r| rng::unit01(rng) < r));
    }
    Ok(drops)
}

/// Key restored in a fully dropped row: the lowest rate, smallest index on ties.
pub fn repair_key(rates: &[f64]) -> usize {
    rates.iter().enumerate().fold(0, |best, (j, &r)| if r < rates[best] { j } else { best })
}

/// Re-admit [`repair_key`] in every row that dropped all keys. Returns the
/// number of repaired rows.
pub fn repair_rows(drops: &mut [bool], rates: &[f64]) -> usize {
    let n = rates.len();
    let keep = repair_key(rates);
    let mut repaired = 0;
    for row in drops.chunks_exact_mut(n) {
        if row.iter().all(|&d| d) {
            row[keep] = false;
            repaired += 1;
        }
    }
    repaired
}

pub fn drops_to_mask<T: Scalar>(drops: &[bool], n_keys: usize) -> Result<Tensor<T>> {
    let data = drops.iter().map(|&d| if d { T::neg_infinity() } else { T::zero() }).collect();
    Tensor::new(vec![drops.len() / n_keys.max(1), n_keys], data)
}

/// Per-key rates `q` such that independent Bernoulli(`q`) rows, conditioned on
/// keeping at least one key, drop key `j` with marginal probability exactly
/// `rates[j]`.
///
/// Solves `P = Π_j (r_j + (1 − r_j)·P)` for the smallest fixed point, with
/// `q_j = r_j + (1 − r_j)·P`. A solution below 1 exists only when the
/// expected number of kept keys exceeds one; `None` is returned otherwise and
/// also when rejection would be too wasteful.
pub fn conditioned_rates(rates: &[f64]) -> Option<Vec<f64>> {
    const MAX_REJECT: f64 = 0.9;
    let kept: f64 = rates.iter().map(|r| 1.0 - r).sum();
    if kept <= 1.0 + 1e-9 {
        return None;
    }
    let mut p = 0.0f64;
    for _ in 0..10_000 {
        let next: f64 = rates.iter().map(|&r| r + (1.0 - r) * p).product();
        if (next - p).abs() < 1e-15 {
            p = next;
            break;
        }
        p = next;
    }
    let q: Vec<f64> = rates.iter().map(|&r| r + (1.0 - r) * p).collect();
    let residual = (q.iter().product::<f64>() - p).abs();
    (p <= MAX_REJECT && residual < 1e-12).then_some(q)
}

/// Additive `n_queries × n` attention mask.
///
/// Each query row drops key `j` with probability `rates[j]` and always keeps
/// at least one key. Rows are drawn from [`conditioned_rates`] by rejection,
/// which keeps the per-key marginals exact. When that is infeasible the row
/// is drawn from `rates` directly and, if fully dropped, repaired with
/// [`repair_rows`].
pub fn sample_drop_entries<T: Scalar>(rates: &[f64], n_queries: usize, rng: &mut Rng) -> Result<Tensor<T>> {
    let n = rates.len();
    let Some(q) = conditioned_rates_checked(rates)? else {
        let mut drops = sample_key_drops(rates, n_queries, rng)?;
        repair_rows(&mut drops, rates);
        return drops_to_mask(&drops, n);
    };
    let mut drops = vec![false; n_queries * n];
    for row in drops.chunks_exact_mut(n) {
        loop {
            let mut all = true;
            for (d, &qj) in row.iter_mut().zip(&q) {
                *d = rng::unit01(rng) < qj;
                all &= *d;
            }
            if !all {
                break;
            }
        }
    }
    drops_to_mask(&drops, n)
}

fn conditioned_rates_checked(rates: &[f64]) -> Result<Option<Vec<f64>>> {
    if let Some(bad) = rates.iter().find(|r| !(0.0..=1.0).contains(*r)) {
        return Err(Error::Contract(format!("drop rate {bad} outside [0, 1]")));
    }
    if rates.is_empty() {
        return Err(Error::Contract("no keys to mask".into()));
    }
    Ok(conditioned_rates(rates))
}
