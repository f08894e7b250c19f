//! End-to-end runs: downstream evaluation of released data, the ablation
//! sweep, the sensitivity sweep, and a small self-contained setup on planted
//! data.

use serde::{Deserialize, Serialize};

use crate::dataset::planted::{self, PlantedConfig};
use crate::dataset::{filter_k_core, InteractionDataset, SplitLists};
use crate::error::Result;
use crate::mf::{evaluate, pretrain_bpr, BprConfig, BprRecommender, MetricsReport};
use crate::privacy::{PrivacyPreference, SimilarityIndex};
use crate::synthesis::{Generator, Preferences, SimilarityReport, Variant};
use crate::trainer::{train, ModelCheckpoint, TrainConfig};

/// Retrain BPR-MF on `train` (same valid/test as `data`) and score it on the test split.
pub fn downstream_bpr(data: &SplitLists, train: Vec<Vec<usize>>, bpr: &BprConfig, n: usize) -> Result<MetricsReport> {
    let released = data.with_train(train)?;
    let emb = pretrain_bpr(&released, bpr)?;
    Ok(evaluate(&BprRecommender { embeddings: &emb }, &released, n, false))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub k: f64,
    pub gamma: f64,
    pub variant: Variant,
    pub report: MetricsReport,
}

/// Every variant at every `k`, each release scored by a retrained BPR-MF.
pub fn ablation(
    generator: &Generator<'_>,
    variants: &[Variant],
    ks: &[f64],
    gamma: f64,
    bpr: &BprConfig,
    n: usize,
    seed: u64,
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for &k in ks {
        let prefs = Preferences::Global(PrivacyPreference::new(k, gamma)?);
        for &variant in variants {
            let release = generator.generate(&prefs, variant, seed)?;
            let report = downstream_bpr(generator.data, release.train, bpr, n)?;
            log::info!("k {k} gamma {gamma} {}: recall@{n} {:.4}", variant.name(), report.recall);
            rows.push(AblationRow { k, gamma, variant, report });
        }
    }
    Ok(rows)
}

/// CSV `k,gamma,variant,precision@N,recall@N,ndcg@N`.
pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let n = rows.first().map_or(20, |r| r.report.n);
    let mut out = format!("k,gamma,variant,precision@{n},recall@{n},ndcg@{n}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.k,
            r.gamma,
            r.variant.name(),
            r.report.precision,
            r.report.recall,
            r.report.ndcg
        ));
    }
    out
}

/// Mean recorded relative similarity of full-model releases at each `gamma`.
pub fn sensitivity_sweep(generator: &Generator<'_>, gammas: &[f64], k: f64, seed: u64) -> Result<SimilarityReport> {
    let mut rows = Vec::with_capacity(gammas.len());
    for &gamma in gammas {
        let prefs = Preferences::Global(PrivacyPreference::new(k, gamma)?);
        let release = generator.generate(&prefs, Variant::Full, seed)?;
        rows.push((gamma, release.mean_similarity().unwrap_or(0.0)));
    }
    Ok(SimilarityReport::new(rows))
}

/// Planted data, filtering, pretraining and training settings for a run
/// that fits on one core in a few minutes.
#[derive(Debug, Clone)]
pub struct DeskSetup {
    pub planted: PlantedConfig,
    pub min_degree: usize,
    pub bpr: BprConfig,
    pub train: TrainConfig,
    pub top_n: usize,
}

impl Default for DeskSetup {
    fn default() -> Self {
        Self {
            planted: PlantedConfig::default(),
            min_degree: 10,
            bpr: BprConfig {
                learning_rate: 1e-2,
                l2: 1e-1,
                ..Default::default()
            },
            train: TrainConfig {
                learning_rate: 1e-2,
                batch_size: 256,
                epochs: 60,
                beta: 1.0,
                lambda_s: 10.0,
                lambda_g: 1.0,
                ..Default::default()
            },
            top_n: 20,
        }
    }
}

/// Filtered, split data with pretrained embeddings.
pub struct Prepared {
    pub dataset: InteractionDataset,
    pub data: SplitLists,
    pub emb: crate::mf::EmbeddingTable,
    pub index: SimilarityIndex,
}

impl DeskSetup {
    /// The planted dataset is fixed; `seed` drives the split and pretraining.
    pub fn prepare(&self, seed: u64) -> Result<Prepared> {
        let raw = planted::generate(&self.planted)?;
        let dataset = filter_k_core(&raw, self.min_degree)?.split(seed)?;
        let data = dataset.split_lists()?;
        let emb = pretrain_bpr(&data, &BprConfig { seed, ..self.bpr.clone() })?;
        let index = SimilarityIndex::build(&emb.items, self.train.similarity);
        Ok(Prepared { dataset, data, emb, index })
    }

    pub fn train(&self, prepared: &Prepared, seed: u64, gammas: Option<Vec<f64>>) -> Result<ModelCheckpoint> {
        let mut cfg = TrainConfig { seed, ..self.train.clone() };
        if let Some(g) = gammas {
            cfg.train_gammas = g;
        }
        train(&prepared.data, &prepared.emb, &cfg)
    }
}

impl Prepared {
    pub fn generator<'a>(&'a self, model: &'a ModelCheckpoint) -> Generator<'a> {
        Generator {
            model: &model.params,
            emb: &self.emb,
            index: &self.index,
            data: &self.data,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mf::MetricsReport;

    #[test]
    fn csv_layout() {
        let report = MetricsReport {
            n: 20,
            precision: 0.1,
            recall: 0.5,
            ndcg: 0.25,
            num_users: 3,
            per_user: None,
        };
        let rows = vec![AblationRow { k: 0.2, gamma: 0.9, variant: Variant::FixedSimilarity(0.9), report }];
        assert_eq!(
            ablation_csv(&rows),
            "k,gamma,variant,precision@20,recall@20,ndcg@20\n0.2,0.9,fixed-similarity,0.1,0.5,0.25\n"
        );
    }
}
