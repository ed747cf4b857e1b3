//! Forward/backward for one batch and the optimizer update.
//!
//! Each item in the batch (positives plus the shared random pool) goes
//! through the item tower exactly once; its embedding serves as the positive
//! of its own example and as a negative for every other example that picked
//! it. The query-by-item inner products form a `b × (b + n_rand)` matrix per
//! head.

use super::batch::{Batch, TrainCorpus};
use super::optimizer::AdaGrad;
use super::scoring::soft_score_grad;
use crate::error::{Error, Result};
use crate::nn::{axpy, dot};
use crate::towers::{ItemCache, ItemEmbedding, QueryCache, QueryHeads, TwoTower};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParams {
    pub beta: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepStats {
    pub loss: f64,
    /// Item-tower forward passes performed for this batch.
    pub item_forwards: usize,
    /// Hinge terms with positive loss.
    pub active_terms: usize,
    /// Total (example, negative) terms.
    pub terms: usize,
}

struct Forward {
    heads: Vec<(QueryHeads, QueryCache)>,
    items: Vec<(ItemEmbedding, ItemCache)>,
    /// `scores[i][u]` = (soft score, d score / d inner product per head)
    scores: Vec<Vec<(f64, Vec<f64>)>>,
}

fn forward(towers: &TwoTower, corpus: &TrainCorpus, batch: &Batch, beta: f64) -> Result<Forward> {
    let items = batch
        .items()
        .map(|idx| towers.item.forward_cached(&corpus.items[idx].tokens, &[]))
        .collect::<Result<Vec<_>>>()?;
    let heads = batch
        .queries
        .iter()
        .map(|q| towers.query.forward_cached(q, &[]))
        .collect::<Result<Vec<_>>>()?;
    let scores = heads
        .iter()
        .map(|(h, _)| {
            items
                .iter()
                .map(|(g, _)| {
                    let ips: Vec<f64> = h.iter().map(|e| dot(e, &g.g)).collect();
                    soft_score_grad(&ips, beta)
                })
                .collect()
        })
        .collect();
    Ok(Forward { heads, items, scores })
}

/// Column of the score matrix holding negative `set` entry.
fn negative_columns(batch: &Batch, i: usize) -> impl Iterator<Item = usize> + '_ {
    let b = batch.len();
    let set = &batch.negatives[i];
    set.batch.iter().copied().chain(set.random.iter().map(move |&p| b + p))
}

/// Batch loss `Σ_i Σ_{j∈N_i} max(0, δ − f(q_i, s⁺_i) + f(q_i, s⁻_j))`.
pub fn batch_loss(towers: &TwoTower, corpus: &TrainCorpus, batch: &Batch, params: LossParams) -> Result<f64> {
    let fw = forward(towers, corpus, batch, params.beta)?;
    let mut loss = 0.0;
    for i in 0..batch.len() {
        let f_pos = fw.scores[i][i].0;
        for u in negative_columns(batch, i) {
            loss += (params.delta - f_pos + fw.scores[i][u].0).max(0.0);
        }
    }
    Ok(loss)
}

/// Loss and analytic gradient with respect to every parameter.
pub fn loss_and_grad(
    towers: &TwoTower,
    corpus: &TrainCorpus,
    batch: &Batch,
    params: LossParams,
) -> Result<(StepStats, TwoTower)> {
    let fw = forward(towers, corpus, batch, params.beta)?;
    let b = batch.len();
    let n_items = fw.items.len();
    let mut stats = StepStats {
        item_forwards: n_items,
        ..StepStats::default()
    };

    // d loss / d f(q_i, item u)
    let mut coef = vec![vec![0.0f64; n_items]; b];
    for i in 0..b {
        let f_pos = fw.scores[i][i].0;
        for u in negative_columns(batch, i) {
            stats.terms += 1;
            let term = params.delta - f_pos + fw.scores[i][u].0;
            if term > 0.0 {
                stats.loss += term;
                stats.active_terms += 1;
                coef[i][i] -= 1.0;
                coef[i][u] += 1.0;
            }
        }
    }

    let mut grads = towers.zeros_like();
    if stats.active_terms == 0 {
        return Ok((stats, grads));
    }
    let dim = towers.config.dim;
    let m = towers.config.heads;
    let mut d_items = vec![vec![0.0f64; dim]; n_items];
    for i in 0..b {
        let (heads, cache) = &fw.heads[i];
        let mut d_heads = vec![vec![0.0f64; dim]; m];
        for u in 0..n_items {
            let c = coef[i][u];
            if c == 0.0 {
                continue;
            }
            let g = &fw.items[u].0.g;
            let dfds = &fw.scores[i][u].1;
            for h in 0..m {
                let w = c * dfds[h];
                axpy(w, g, &mut d_heads[h]);
                axpy(w, heads.head(h), &mut d_items[u]);
            }
        }
        towers.query.backward(cache, &d_heads, &mut grads.query);
    }
    for (u, (emb, cache)) in fw.items.iter().enumerate() {
        towers.item.backward(cache, emb, &d_items[u], &mut grads.item);
    }
    Ok((stats, grads))
}

/// Computes the gradient and applies one AdaGrad update.
pub fn train_step(
    towers: &mut TwoTower,
    corpus: &TrainCorpus,
    batch: &Batch,
    params: LossParams,
    optimizer: &mut AdaGrad,
    step: usize,
) -> Result<StepStats> {
    let (stats, grads) = loss_and_grad(towers, corpus, batch, params)?;
    if !stats.loss.is_finite() {
        return Err(Error::NonFinite { what: "loss", step });
    }
    if !grads.all_finite() {
        return Err(Error::NonFinite {
            what: "gradient",
            step,
        });
    }
    if stats.active_terms > 0 {
        optimizer.step(towers, &grads);
    }
    Ok(stats)
}
