use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use synthrec::dataset::planted::{self, PlantedConfig};
use synthrec::dataset::{filter_k_core, load_interactions, read_interaction_lists, read_splits, SplitLists};
use synthrec::experiment::{ablation, ablation_csv, downstream_bpr, sensitivity_sweep};
use synthrec::io_util::{fingerprint, with_suffix, write_atomic};
use synthrec::mf::{evaluate as score, metrics_csv, pretrain_bpr, EmbeddingTable, MetricsReport, RandomRecommender};
use synthrec::privacy::{PrivacyPreference, SimilarityIndex};
use synthrec::synthesis::{Generator, Preferences, Variant};
use synthrec::trainer::ModelCheckpoint;

use crate::config::{EvalModel, PipelineConfig};

struct Layout {
    dir: PathBuf,
}

impl Layout {
    fn new(cfg: &PipelineConfig) -> Self {
        Self { dir: cfg.out_dir.clone() }
    }

    fn data_prefix(&self) -> PathBuf {
        self.dir.join("data")
    }

    fn users_emb(&self) -> PathBuf {
        self.dir.join("users.emb")
    }

    fn items_emb(&self) -> PathBuf {
        self.dir.join("items.emb")
    }

    fn model(&self) -> PathBuf {
        self.dir.join("model.json")
    }

    fn file(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }
}

fn require(path: &Path) -> Result<()> {
    if !path.is_file() {
        bail!("missing input file {}", path.display());
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, |w| w.write_all(text.as_bytes()))?;
    Ok(())
}

fn load_data(layout: &Layout) -> Result<SplitLists> {
    let prefix = layout.data_prefix();
    for suffix in ["train", "valid", "test", "users", "items"] {
        require(&with_suffix(&prefix, suffix))?;
    }
    Ok(read_splits(&prefix)?.split_lists()?)
}

fn load_embeddings(layout: &Layout) -> Result<EmbeddingTable> {
    require(&layout.users_emb())?;
    require(&layout.items_emb())?;
    Ok(EmbeddingTable::load(&layout.users_emb(), &layout.items_emb())?)
}

/// Checkpoint plus the embeddings it was trained on; refuses to continue if
/// the embedding files on disk are not those files.
fn load_model(layout: &Layout) -> Result<(ModelCheckpoint, EmbeddingTable)> {
    require(&layout.model())?;
    let ckpt = ModelCheckpoint::load(&layout.model())?;
    for (path, recorded) in [
        (layout.users_emb(), &ckpt.user_embedding_file),
        (layout.items_emb(), &ckpt.item_embedding_file),
    ] {
        require(&path)?;
        if let Some(expected) = recorded {
            let found = fingerprint(&path)?;
            if &found != expected {
                bail!(
                    "{} does not match the checkpoint (expected sha256 {expected}, found {found}); rerun `train`",
                    path.display()
                );
            }
        }
    }
    let emb = load_embeddings(layout)?;
    ckpt.check_embeddings(&emb)?;
    Ok((ckpt, emb))
}

pub fn ingest(cfg: &PipelineConfig, use_planted: bool) -> Result<()> {
    let raw = if use_planted {
        planted::generate(&PlantedConfig::default())?
    } else {
        let Some(path) = &cfg.dataset.raw else {
            bail!("no input: pass --input, set dataset.raw in the config, or use --planted");
        };
        require(path)?;
        load_interactions(path)?
    };
    let filtered = filter_k_core(&raw, cfg.dataset.min_degree)?;
    let split = filtered.split(cfg.seed)?;
    let layout = Layout::new(cfg);
    split.write_splits(&layout.data_prefix())?;
    println!("users {}", filtered.num_users());
    println!("items {}", filtered.num_items());
    println!("interactions {}", filtered.num_interactions());
    println!("sparsity {:.2}%", 100.0 * filtered.sparsity());
    Ok(())
}

pub fn pretrain(cfg: &PipelineConfig) -> Result<()> {
    let layout = Layout::new(cfg);
    let data = load_data(&layout)?;
    let emb = pretrain_bpr(&data, &cfg.pretrain.bpr(cfg.seed))?;
    emb.save(&layout.users_emb(), &layout.items_emb())?;
    println!(
        "wrote {} and {} ({} users, {} items, dim {})",
        layout.users_emb().display(),
        layout.items_emb().display(),
        emb.num_users(),
        emb.num_items(),
        emb.dim()
    );
    Ok(())
}

pub fn train(cfg: &PipelineConfig) -> Result<()> {
    let layout = Layout::new(cfg);
    let data = load_data(&layout)?;
    let emb = load_embeddings(&layout)?;
    let mut ckpt = synthrec::trainer::train(&data, &emb, &cfg.train)?;
    ckpt.user_embedding_file = Some(fingerprint(&layout.users_emb())?);
    ckpt.item_embedding_file = Some(fingerprint(&layout.items_emb())?);
    ckpt.save(&layout.model())?;
    write_text(&layout.file("loss.csv"), &synthrec::trainer::loss_curve_csv(&ckpt.history))?;
    let last = ckpt.history.last().map_or(f64::NAN, |r| r.loss.total);
    println!(
        "wrote {} after {} epochs (best epoch {:?}, final loss {last:.4})",
        layout.model().display(),
        ckpt.epoch,
        ckpt.best_epoch
    );
    Ok(())
}

fn with_generator<T>(layout: &Layout, f: impl FnOnce(&Generator<'_>) -> Result<T>) -> Result<T> {
    let data = load_data(layout)?;
    let (ckpt, emb) = load_model(layout)?;
    let index = SimilarityIndex::build(&emb.items, ckpt.config.similarity);
    f(&Generator {
        model: &ckpt.params,
        emb: &emb,
        index: &index,
        data: &data,
    })
}

pub fn generate(cfg: &PipelineConfig, name: &str) -> Result<()> {
    let layout = Layout::new(cfg);
    with_generator(&layout, |g| {
        let prefs = match &cfg.generate.prefs_file {
            Some(path) => {
                require(path)?;
                Preferences::read(path, g.data.num_users())?
            }
            None => Preferences::Global(PrivacyPreference::new(cfg.generate.k, cfg.generate.gamma)?),
        };
        let release = g.generate(&prefs, Variant::Full, cfg.seed)?;
        let train = layout.file(&format!("{name}.train"));
        let audit = layout.file(&format!("{name}.replacements.csv"));
        release.write_train(&train)?;
        release.write_replacements(&audit)?;
        println!(
            "wrote {} and {} ({} replacements, mean f_sim {:.4})",
            train.display(),
            audit.display(),
            release.replacements.len(),
            release.mean_similarity().unwrap_or(0.0)
        );
        Ok(())
    })
}

/// Training lists from a dense `<user> <item>` file, checked against the dataset shape.
fn read_release(path: &Path, data: &SplitLists) -> Result<Vec<Vec<usize>>> {
    require(path)?;
    let mut lists = vec![Vec::new(); data.num_users()];
    for (u, i) in read_interaction_lists(path)? {
        if u >= data.num_users() || i >= data.num_items {
            bail!("{}: pair ({u}, {i}) outside the dataset", path.display());
        }
        lists[u].push(i);
    }
    Ok(lists)
}

pub fn evaluate(cfg: &PipelineConfig, train: Option<&Path>) -> Result<()> {
    let layout = Layout::new(cfg);
    let data = load_data(&layout)?;
    let (label, lists) = match train {
        Some(path) => {
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("released").to_owned();
            (stem, read_release(path, &data)?)
        }
        None => ("original".to_owned(), data.train.clone()),
    };
    let n = cfg.evaluate.top_n;
    let (model, report): (&str, MetricsReport) = match cfg.evaluate.model {
        EvalModel::Bprmf => ("bprmf", downstream_bpr(&data, lists, &cfg.pretrain.bpr(cfg.seed), n)?),
        EvalModel::Random => {
            let released = data.with_train(lists)?;
            let model = RandomRecommender {
                num_items: released.num_items,
                seed: cfg.seed,
            };
            ("random", score(&model, &released, n, false))
        }
    };
    let csv = metrics_csv(&[(&label, model, &report)]);
    let out = layout.file(&format!("{label}.{model}.metrics.csv"));
    write_text(&out, &csv)?;
    print!("{csv}");
    Ok(())
}

pub fn ablate(cfg: &PipelineConfig) -> Result<()> {
    let layout = Layout::new(cfg);
    let variants = [
        Variant::Full,
        Variant::RandomSelection,
        Variant::RandomGeneration,
        Variant::FixedSimilarity(cfg.ablate.fixed_similarity),
    ];
    let rows = with_generator(&layout, |g| {
        // Write each released dataset alongside the metrics.
        for &k in &cfg.ablate.ks {
            let prefs = Preferences::Global(PrivacyPreference::new(k, cfg.ablate.gamma)?);
            for &variant in &variants {
                let release = g.generate(&prefs, variant, cfg.seed)?;
                release.write_train(&layout.file(&format!("ablation/{}-k{k}.train", variant.name())))?;
            }
        }
        Ok(ablation(
            g,
            &variants,
            &cfg.ablate.ks,
            cfg.ablate.gamma,
            &cfg.pretrain.bpr(cfg.seed),
            cfg.evaluate.top_n,
            cfg.seed,
        )?)
    })?;
    let csv = ablation_csv(&rows);
    write_text(&layout.file("ablation.csv"), &csv)?;
    print!("{csv}");
    let mut worse: BTreeMap<String, Vec<&str>> = BTreeMap::new();
    for k_rows in rows.chunks(variants.len()) {
        let full = k_rows[0].report.recall;
        for r in &k_rows[1..] {
            if r.report.recall > full {
                worse.entry(format!("k={}", r.k)).or_default().push(r.variant.name());
            }
        }
    }
    for (k, names) in worse {
        log::warn!("{k}: full model recall below {}", names.join(", "));
    }
    Ok(())
}

pub fn report(cfg: &PipelineConfig) -> Result<()> {
    let layout = Layout::new(cfg);
    let report = with_generator(&layout, |g| Ok(sensitivity_sweep(g, &cfg.report.gammas, cfg.report.k, cfg.seed)?))?;
    let out = layout.file("similarity.csv");
    write_text(&out, &report.to_csv()).with_context(|| format!("writing {}", out.display()))?;
    print!("{}", report.to_csv());
    if report.degenerate {
        println!("spearman undefined (constant mean similarity)");
    } else {
        println!("spearman {:.4}", report.spearman);
    }
    Ok(())
}
