use ndarray::Array2;
use rand::seq::SliceRandom;

use super::EmbeddingTable;
use crate::dataset::{sample_negative, SplitLists};
use crate::error::{Error, Result};
use crate::math::{neg_log_sigmoid, sigmoid};
use crate::optim::AdamState;

/// `-ln sigmoid(score_pos - score_neg)`.
pub fn bpr_loss(score_pos: f64, score_neg: f64) -> Result<f64> {
    if !score_pos.is_finite() || !score_neg.is_finite() {
        return Err(Error::NonFinite("bpr_loss input".into()));
    }
    Ok(neg_log_sigmoid(score_pos - score_neg))
}

/// Partial derivatives of [`bpr_loss`] with respect to `(score_pos, score_neg)`.
pub fn bpr_loss_grad(score_pos: f64, score_neg: f64) -> (f64, f64) {
    let s = sigmoid(score_neg - score_pos);
    (-s, s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triple {
    pub user: usize,
    pub pos: usize,
    pub neg: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BprConfig {
    pub dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub batch_size: usize,
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for BprConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            epochs: 100,
            learning_rate: 5e-3,
            l2: 1e-4,
            batch_size: 2048,
            init_scale: 0.05,
            seed: 0,
        }
    }
}

/// Mean BPR loss over `triples` plus `l2 / (2B)` times the squared norms of
/// the embeddings the batch touches. Gradients are accumulated into
/// `grad_users` / `grad_items`.
pub fn bpr_batch_loss(
    table: &EmbeddingTable,
    triples: &[Triple],
    l2: f64,
    grad_users: &mut Array2<f64>,
    grad_items: &mut Array2<f64>,
) -> f64 {
    if triples.is_empty() {
        return 0.0;
    }
    let inv_b = 1.0 / triples.len() as f64;
    let mut loss = 0.0;
    for t in triples {
        let p = table.user(t.user);
        let qi = table.item(t.pos);
        let qj = table.item(t.neg);
        let x = p.dot(&qi) - p.dot(&qj);
        loss += neg_log_sigmoid(x) * inv_b;
        loss += 0.5 * l2 * inv_b * (p.dot(&p) + qi.dot(&qi) + qj.dot(&qj));

        let c = -sigmoid(-x) * inv_b;
        let r = l2 * inv_b;
        {
            let mut gp = grad_users.row_mut(t.user);
            for k in 0..p.len() {
                gp[k] += c * (qi[k] - qj[k]) + r * p[k];
            }
        }
        {
            let mut gi = grad_items.row_mut(t.pos);
            for k in 0..p.len() {
                gi[k] += c * p[k] + r * qi[k];
            }
        }
        let mut gj = grad_items.row_mut(t.neg);
        for k in 0..p.len() {
            gj[k] += -c * p[k] + r * qj[k];
        }
    }
    loss
}

/// Train BPR-MF on `data.train` with one sampled negative per positive per
/// epoch and mini-batch Adam. Negatives exclude the user's training items.
pub fn pretrain_bpr(data: &SplitLists, cfg: &BprConfig) -> Result<EmbeddingTable> {
    if cfg.batch_size == 0 || cfg.dim == 0 {
        return Err(Error::InvalidArgument("batch_size and dim must be positive".into()));
    }
    let num_users = data.num_users();
    let num_items = data.num_items;
    let mut init_rng = crate::rng::stream(cfg.seed, "bpr-init");
    let mut table = EmbeddingTable::random(num_users, num_items, cfg.dim, cfg.init_scale, &mut init_rng);
    let mut pairs: Vec<(usize, usize)> = data
        .train
        .iter()
        .enumerate()
        .flat_map(|(u, items)| items.iter().map(move |&i| (u, i)))
        .collect();
    if pairs.is_empty() && cfg.epochs > 0 {
        return Err(Error::EmptyDataset("training split is empty".into()));
    }
    let consumed: Vec<Vec<usize>> = data
        .train
        .iter()
        .map(|items| {
            let mut v = items.clone();
            v.sort_unstable();
            v.dedup();
            v
        })
        .collect();

    let mut rng = crate::rng::stream(cfg.seed, "bpr-train");
    let mut adam = AdamState::new((num_users + num_items) * cfg.dim);
    let mut grad_users = Array2::zeros(table.users.raw_dim());
    let mut grad_items = Array2::zeros(table.items.raw_dim());
    let mut last_finite = None;
    for epoch in 0..cfg.epochs {
        pairs.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in pairs.chunks(cfg.batch_size) {
            let mut triples = Vec::with_capacity(chunk.len());
            for &(user, pos) in chunk {
                let neg = sample_negative(&consumed[user], num_items, &mut rng)
                    .ok_or(Error::Exhausted { user })?;
                triples.push(Triple { user, pos, neg });
            }
            grad_users.fill(0.0);
            grad_items.fill(0.0);
            let loss = bpr_batch_loss(&table, &triples, cfg.l2, &mut grad_users, &mut grad_items);
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, last_finite });
            }
            epoch_loss += loss * chunk.len() as f64;
            adam.step(
                cfg.learning_rate,
                [
                    (table.users.as_slice_mut().expect("standard layout"), grad_users.as_slice().expect("standard layout")),
                    (table.items.as_slice_mut().expect("standard layout"), grad_items.as_slice().expect("standard layout")),
                ],
            );
        }
        if !table.is_finite() {
            return Err(Error::Diverged { epoch, last_finite });
        }
        last_finite = Some(epoch);
        log::debug!("bpr epoch {epoch}: loss {:.6}", epoch_loss / pairs.len() as f64);
    }
    Ok(table)
}
