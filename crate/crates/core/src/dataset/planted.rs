//! Planted-topic interaction generator for tests, demos and desk-scale runs.
//!
//! Items belong to topics and carry a Zipf-like popularity within their
//! topic. Each user favours a primary and a secondary topic; most of a
//! user's interactions come from those, the rest from anywhere.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng as _;

use super::InteractionDataset;
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct PlantedConfig {
    pub num_users: usize,
    pub num_items: usize,
    pub num_topics: usize,
    pub min_interactions: usize,
    pub max_interactions: usize,
    /// Probability that an interaction comes from one of the user's topics.
    pub focus: f64,
    /// Popularity exponent inside a topic.
    pub skew: f64,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            num_users: 500,
            num_items: 400,
            num_topics: 8,
            min_interactions: 12,
            max_interactions: 40,
            focus: 0.85,
            skew: 0.7,
            seed: 0,
        }
    }
}

/// Generate a dataset with raw ids `u<n>` / `i<n>`.
pub fn generate(cfg: &PlantedConfig) -> Result<InteractionDataset> {
    let mut rng = crate::rng::stream(cfg.seed, "planted");
    let mut order: Vec<usize> = (0..cfg.num_items).collect();
    order.shuffle(&mut rng);
    let topics = cfg.num_topics.max(1);
    let mut by_topic: Vec<Vec<usize>> = vec![Vec::new(); topics];
    for (pos, &item) in order.iter().enumerate() {
        by_topic[pos % topics].push(item);
    }
    let samplers: Vec<WeightedIndex<f64>> = by_topic
        .iter()
        .map(|items| {
            let w = (0..items.len()).map(|r| 1.0 / ((r + 1) as f64).powf(cfg.skew));
            WeightedIndex::new(w).expect("topic has items")
        })
        .collect();

    let user_names: Vec<String> = (0..cfg.num_users).map(|u| format!("u{u}")).collect();
    let item_names: Vec<String> = (0..cfg.num_items).map(|i| format!("i{i}")).collect();
    let mut pairs = Vec::new();
    for user in &user_names {
        let primary = rng.random_range(0..topics);
        let secondary = rng.random_range(0..topics);
        let target = rng
            .random_range(cfg.min_interactions..=cfg.max_interactions)
            .min(cfg.num_items);
        let mut chosen = std::collections::HashSet::new();
        let mut attempts = 0;
        while chosen.len() < target && attempts < 50 * target {
            attempts += 1;
            let topic = if rng.random_bool(cfg.focus) {
                if rng.random_bool(0.7) {
                    primary
                } else {
                    secondary
                }
            } else {
                rng.random_range(0..topics)
            };
            let item = by_topic[topic][samplers[topic].sample(&mut rng)];
            if chosen.insert(item) {
                pairs.push((user.as_str(), item_names[item].as_str()));
            }
        }
    }
    InteractionDataset::from_raw_pairs(pairs)
}
