use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn synthrec(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_synthrec"))
        .args(args)
        .arg("--out-dir")
        .arg(dir.join("out"))
        .arg("--config")
        .arg(dir.join("config.toml"))
        .output()
        .expect("run synthrec")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = synthrec(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// 60 users over 40 items, 15 interactions each, plus one user and one item
/// too sparse to survive the 10-core filter.
fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let mut raw = String::from("user,item,rating,timestamp\n");
    for u in 0..60 {
        for j in 0..15 {
            writeln!(raw, "u{u},i{},5,0", (u * 7 + j * 3) % 40).unwrap();
        }
    }
    raw.push_str("lurker,i0,1,0\nu0,rare,1,0\n");
    fs::write(dir.path().join("ratings.csv"), raw).unwrap();
    fs::write(
        dir.path().join("config.toml"),
        r#"
seed = 3

[dataset]
raw = "IN"

[pretrain]
dim = 8
epochs = 5
batch_size = 128

[train]
epochs = 2
batch_size = 128
hidden_dim = 8

[ablate]
ks = [0.2, 0.6]
"#
        .replace("IN", dir.path().join("ratings.csv").to_str().unwrap()),
    )
    .unwrap();
    dir
}

#[test]
fn full_pipeline() {
    let dir = workspace();
    let d = dir.path();
    let out = d.join("out");

    let stats = ok(d, &["ingest"]);
    // 60 users x 40 items, 900 interactions after dropping the sparse rows
    assert_eq!(stats, "users 60\nitems 40\ninteractions 900\nsparsity 62.50%\n");
    assert!(out.join("data.train").is_file());

    ok(d, &["pretrain"]);
    let header = fs::read_to_string(out.join("items.emb")).unwrap();
    assert!(header.starts_with("40 8\n"));
    ok(d, &["train"]);
    assert!(fs::read_to_string(out.join("loss.csv")).unwrap().lines().count() >= 2);

    ok(d, &["generate", "--k", "0.5", "--gamma", "0.3"]);
    let first = fs::read(out.join("synthetic.train")).unwrap();
    let audit = fs::read_to_string(out.join("synthetic.replacements.csv")).unwrap();
    ok(d, &["generate", "--k", "0.5", "--gamma", "0.3"]);
    assert_eq!(first, fs::read(out.join("synthetic.train")).unwrap());
    assert_eq!(audit, fs::read_to_string(out.join("synthetic.replacements.csv")).unwrap());
    assert!(audit.starts_with("user,original_item,synthetic_item,f_sim\n"));
    assert_eq!(
        String::from_utf8(first).unwrap().lines().count(),
        fs::read_to_string(out.join("data.train")).unwrap().lines().count()
    );

    let a = ok(d, &["evaluate"]);
    let b = ok(d, &["evaluate"]);
    assert_eq!(a, b);
    assert!(a.starts_with("dataset,model,precision@20,recall@20,ndcg@20\noriginal,bprmf,"));
    let released = out.join("synthetic.train");
    let r = ok(d, &["evaluate", "--model", "random", "--top-n", "5", "--train", released.to_str().unwrap()]);
    assert!(r.contains("synthetic,random,"), "{r}");
    assert!(out.join("synthetic.random.metrics.csv").is_file());

    let ablation = ok(d, &["ablate"]);
    assert_eq!(ablation.lines().count(), 1 + 2 * 4);
    for variant in ["full", "random-selection", "random-generation", "fixed-similarity"] {
        assert!(out.join(format!("ablation/{variant}-k0.2.train")).is_file());
    }

    let report = ok(d, &["report", "--gammas", "0.1,0.5,0.9"]);
    assert!(report.starts_with("gamma,mean_f_sim\n0.1,"));
    assert!(report.contains("spearman"));
}

#[test]
fn per_user_preferences() {
    let dir = workspace();
    let d = dir.path();
    ok(d, &["ingest"]);
    ok(d, &["pretrain"]);
    ok(d, &["train", "--epochs", "1"]);
    let mut prefs = String::new();
    for u in 0..60 {
        writeln!(prefs, "{u} {} 0.5", if u % 2 == 0 { 0.2 } else { 0.8 }).unwrap();
    }
    let path = d.join("prefs.txt");
    fs::write(&path, prefs).unwrap();
    ok(d, &["generate", "--prefs-file", path.to_str().unwrap()]);
    let audit = fs::read_to_string(d.join("out/synthetic.replacements.csv")).unwrap();
    let count = |user: &str| audit.lines().filter(|l| l.starts_with(&format!("{user},"))).count();
    // 13 training items each: round(0.2 * 13) = 3, round(0.8 * 13) = 10
    assert_eq!(count("0"), 3);
    assert_eq!(count("1"), 10);
}

#[test]
fn missing_input_names_the_path() {
    let dir = workspace();
    let out = synthrec(dir.path(), &["ingest", "--input", "/nonexistent/ratings.csv"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/ratings.csv"));

    let out = synthrec(dir.path(), &["pretrain"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("data.train"));
}

#[test]
fn stale_embeddings_are_refused() {
    let dir = workspace();
    let d = dir.path();
    ok(d, &["ingest"]);
    ok(d, &["pretrain"]);
    ok(d, &["train", "--epochs", "1"]);
    ok(d, &["pretrain", "--seed", "99"]);
    let out = synthrec(d, &["generate"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("does not match the checkpoint"), "{err}");
}

#[test]
fn invalid_flags_rejected() {
    let dir = workspace();
    let out = synthrec(dir.path(), &["generate", "--k", "1.5"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("generate.k"));
}
