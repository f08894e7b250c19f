use std::collections::HashSet;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Recommender;
use crate::dataset::SplitLists;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserMetrics {
    pub precision: f64,
    pub recall: f64,
    pub ndcg: f64,
}

/// Precision, recall and NDCG (binary gain, `1/log2(rank+1)` discount) of
/// the first `n` recommendations. `None` when `relevant` is empty.
pub fn metrics_at_n(recommended: &[usize], relevant: &[usize], n: usize) -> Option<UserMetrics> {
    if relevant.is_empty() || n == 0 {
        return None;
    }
    let relevant: HashSet<usize> = relevant.iter().copied().collect();
    let mut hits = 0usize;
    let mut dcg = 0.0;
    for (pos, item) in recommended.iter().take(n).enumerate() {
        if relevant.contains(item) {
            hits += 1;
            dcg += 1.0 / ((pos + 2) as f64).log2();
        }
    }
    let idcg: f64 = (0..n.min(relevant.len()))
        .map(|pos| 1.0 / ((pos + 2) as f64).log2())
        .sum();
    Some(UserMetrics {
        precision: hits as f64 / n as f64,
        recall: hits as f64 / relevant.len() as f64,
        ndcg: dcg / idcg,
    })
}

/// Averages over users with at least one test item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    pub precision: f64,
    pub recall: f64,
    pub ndcg: f64,
    pub num_users: usize,
    pub per_user: Option<Vec<(usize, UserMetrics)>>,
}

/// Rank every item outside the user's train+valid items and score the top
/// `n` against the test items.
pub fn evaluate(model: &dyn Recommender, data: &SplitLists, n: usize, keep_per_user: bool) -> MetricsReport {
    let rows: Vec<(usize, UserMetrics)> = (0..data.num_users())
        .into_par_iter()
        .filter_map(|u| {
            if data.test[u].is_empty() {
                return None;
            }
            let mut exclude: Vec<usize> = data.train[u].iter().chain(&data.valid[u]).copied().collect();
            exclude.sort_unstable();
            exclude.dedup();
            let recs = model.recommend(u, &exclude, n);
            metrics_at_n(&recs, &data.test[u], n).map(|m| (u, m))
        })
        .collect();
    let count = rows.len().max(1) as f64;
    let sum = |f: fn(&UserMetrics) -> f64| rows.iter().map(|(_, m)| f(m)).sum::<f64>() / count;
    MetricsReport {
        n,
        precision: sum(|m| m.precision),
        recall: sum(|m| m.recall),
        ndcg: sum(|m| m.ndcg),
        num_users: rows.len(),
        per_user: keep_per_user.then_some(rows),
    }
}

/// CSV with header `dataset,model,precision@N,recall@N,ndcg@N`.
pub fn metrics_csv(rows: &[(&str, &str, &MetricsReport)]) -> String {
    let n = rows.first().map_or(20, |r| r.2.n);
    let mut out = format!("dataset,model,precision@{n},recall@{n},ndcg@{n}\n");
    for (dataset, model, r) in rows {
        let _ = writeln!(out, "{dataset},{model},{:.6},{:.6},{:.6}", r.precision, r.recall, r.ndcg);
    }
    out
}
