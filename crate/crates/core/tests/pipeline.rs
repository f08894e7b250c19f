use std::fmt::Write as _;
use std::fs;

use synthrec::dataset::planted::{generate, PlantedConfig};
use synthrec::dataset::{filter_k_core, load_interactions, read_splits, Split};
use synthrec::io_util::with_suffix;
use synthrec::mf::{evaluate, pretrain_bpr, BprConfig, BprRecommender, EmbeddingTable, RandomRecommender};
use synthrec::privacy::{PrivacyPreference, SimilarityIndex};
use synthrec::synthesis::{Generator, Preferences, Variant};
use synthrec::trainer::{train, ModelCheckpoint, TrainConfig};

/// Planted data written out as a raw `user,item,rating,timestamp` log with
/// a few sparse users and items that the 10-core filter must remove.
fn raw_log(dir: &std::path::Path) -> std::path::PathBuf {
    let ds = generate(&PlantedConfig {
        num_users: 120,
        num_items: 90,
        seed: 11,
        ..Default::default()
    })
    .unwrap();
    let mut text = String::from("# user,item,rating,timestamp\n");
    for u in 0..ds.num_users() {
        for &i in ds.items_of(u) {
            let user = ds.user_ids().raw(u).unwrap();
            let item = ds.item_ids().raw(i).unwrap();
            writeln!(text, "{user},{item},5.0,1400000000").unwrap();
        }
    }
    for k in 0..5 {
        writeln!(text, "lurker{k},i{k},3.0,1").unwrap();
        writeln!(text, "u{k},rare{k},1.0,2").unwrap();
    }
    let path = dir.join("ratings.csv");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn ingest_filter_split_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let raw = load_interactions(&raw_log(dir.path())).unwrap();
    assert_eq!(raw.num_users(), 125);
    let filtered = filter_k_core(&raw, 10).unwrap();
    assert!(filtered.user_ids().dense("lurker0").is_none());
    assert!(filtered.item_ids().dense("rare0").is_none());
    for d in filtered.item_degrees() {
        assert!(d >= 10);
    }
    for u in 0..filtered.num_users() {
        assert!(filtered.items_of(u).len() >= 10);
    }

    let split = filtered.split(5).unwrap();
    let prefix = dir.path().join("office");
    split.write_splits(&prefix).unwrap();
    let back = read_splits(&prefix).unwrap();
    assert_eq!(back.num_users(), split.num_users());
    assert_eq!(back.num_interactions(), split.num_interactions());
    for u in 0..split.num_users() {
        for label in Split::ALL {
            let mut a = split.items_in(u, label);
            let mut b = back.items_in(u, label);
            a.sort_unstable();
            b.sort_unstable();
            assert_eq!(a, b);
        }
        assert_eq!(back.user_ids().raw(u), split.user_ids().raw(u));
    }
    for suffix in ["train", "valid", "test", "users", "items"] {
        assert!(with_suffix(&prefix, suffix).exists(), "{suffix}");
    }
}

#[test]
fn pretrained_model_beats_random() {
    let ds = generate(&PlantedConfig::default()).unwrap();
    let data = filter_k_core(&ds, 10).unwrap().split(0).unwrap().split_lists().unwrap();
    let emb = pretrain_bpr(
        &data,
        &BprConfig {
            epochs: 30,
            learning_rate: 1e-2,
            l2: 1e-1,
            ..Default::default()
        },
    )
    .unwrap();
    let bpr = evaluate(&BprRecommender { embeddings: &emb }, &data, 20, false);
    let random = evaluate(&RandomRecommender { num_items: data.num_items, seed: 0 }, &data, 20, false);
    assert!(bpr.ndcg > 3.0 * random.ndcg, "bpr {} random {}", bpr.ndcg, random.ndcg);
    assert!(bpr.recall > random.recall);
}

#[test]
fn files_in_files_out() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate(&PlantedConfig {
        num_users: 40,
        num_items: 60,
        min_interactions: 10,
        max_interactions: 20,
        seed: 2,
        ..Default::default()
    })
    .unwrap()
    .split(2)
    .unwrap();
    let data = ds.split_lists().unwrap();
    let emb = pretrain_bpr(
        &data,
        &BprConfig {
            dim: 16,
            epochs: 20,
            learning_rate: 1e-2,
            l2: 1e-1,
            ..Default::default()
        },
    )
    .unwrap();
    let (users, items) = (dir.path().join("users.emb"), dir.path().join("items.emb"));
    emb.save(&users, &items).unwrap();
    let emb = EmbeddingTable::load(&users, &items).unwrap();

    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 64,
        hidden_dim: Some(16),
        ..Default::default()
    };
    let ckpt = train(&data, &emb, &cfg).unwrap();
    let path = dir.path().join("model.json");
    ckpt.save(&path).unwrap();
    let ckpt = ModelCheckpoint::load(&path).unwrap();
    ckpt.check_embeddings(&emb).unwrap();

    let index = SimilarityIndex::build(&emb.items, cfg.similarity);
    let g = Generator { model: &ckpt.params, emb: &emb, index: &index, data: &data };
    let prefs = Preferences::Global(PrivacyPreference::new(0.3, 0.5).unwrap());
    let write = |tag: &str| {
        let release = g.generate(&prefs, Variant::Full, 8).unwrap();
        let train = dir.path().join(format!("{tag}.train"));
        let pairs = dir.path().join(format!("{tag}.csv"));
        release.write_train(&train).unwrap();
        release.write_replacements(&pairs).unwrap();
        (fs::read(train).unwrap(), fs::read_to_string(pairs).unwrap())
    };
    let (train_a, pairs_a) = write("a");
    let (train_b, pairs_b) = write("b");
    assert_eq!(train_a, train_b);
    assert_eq!(pairs_a, pairs_b);
    assert!(pairs_a.starts_with("user,original_item,synthetic_item,f_sim\n"));
    let released_rows = String::from_utf8(train_a).unwrap().lines().count();
    assert_eq!(released_rows, data.train.iter().map(Vec::len).sum::<usize>());
}
