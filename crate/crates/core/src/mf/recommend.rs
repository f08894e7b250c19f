use std::cmp::Ordering;

use rand::seq::index;

use super::EmbeddingTable;
use crate::rng::Rng;

/// Anything that ranks items for a user.
pub trait Recommender: Sync {
    /// Up to `n` items not in `exclude` (sorted ascending), best first.
    fn recommend(&self, user: usize, exclude: &[usize], n: usize) -> Vec<usize>;
}

/// The `n` highest-scoring items outside `exclude` (sorted ascending), in
/// descending score order with ties broken by ascending item id. Returns
/// every candidate when there are fewer than `n`.
pub fn top_n_by_score(scores: &[f64], exclude: &[usize], n: usize) -> Vec<usize> {
    let mut cand: Vec<usize> = (0..scores.len())
        .filter(|i| exclude.binary_search(i).is_err())
        .collect();
    let cmp = |a: &usize, b: &usize| -> Ordering {
        scores[*b].total_cmp(&scores[*a]).then(a.cmp(b))
    };
    if n == 0 {
        return Vec::new();
    }
    if cand.len() > n {
        cand.select_nth_unstable_by(n - 1, cmp);
        cand.truncate(n);
    }
    cand.sort_unstable_by(cmp);
    cand
}

pub fn recommend_top_n(emb: &EmbeddingTable, user: usize, exclude: &[usize], n: usize) -> Vec<usize> {
    top_n_by_score(&emb.user_scores(user), exclude, n)
}

/// `n` distinct items drawn uniformly from those outside `exclude`.
pub fn random_recommender(num_items: usize, exclude: &[usize], n: usize, rng: &mut Rng) -> Vec<usize> {
    let cand: Vec<usize> = (0..num_items)
        .filter(|i| exclude.binary_search(i).is_err())
        .collect();
    let take = n.min(cand.len());
    index::sample(rng, cand.len(), take)
        .into_iter()
        .map(|k| cand[k])
        .collect()
}

pub struct BprRecommender<'a> {
    pub embeddings: &'a EmbeddingTable,
}

impl Recommender for BprRecommender<'_> {
    fn recommend(&self, user: usize, exclude: &[usize], n: usize) -> Vec<usize> {
        recommend_top_n(self.embeddings, user, exclude, n)
    }
}

/// Uniform recommendations, with a private stream per user so results do
/// not depend on evaluation order.
pub struct RandomRecommender {
    pub num_items: usize,
    pub seed: u64,
}

impl Recommender for RandomRecommender {
    fn recommend(&self, user: usize, exclude: &[usize], n: usize) -> Vec<usize> {
        let mut rng = crate::rng::indexed_stream(self.seed, "random-recommender", user as u64);
        random_recommender(self.num_items, exclude, n, &mut rng)
    }
}
