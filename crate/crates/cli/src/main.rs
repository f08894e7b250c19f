//! `synthrec`: ingest, pretrain, train, generate, evaluate, ablate, report.
//!
//! Every command reads and writes fixed file names inside `--out-dir`, so a
//! pipeline is a sequence of invocations sharing one directory.

mod commands;
mod config;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use config::{EvalModel, PipelineConfig};

#[derive(Debug, Parser)]
#[command(name = "synthrec", version, about = "Preference-controlled synthetic recommendation data")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Top-level seed for every stage.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory holding all pipeline artifacts.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Evaluate training batches on one thread.
    #[arg(long, global = true)]
    deterministic: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load a raw log, apply k-core filtering and write the train/valid/test split.
    Ingest {
        /// Raw `user,item[,rating,timestamp]` file.
        #[arg(long, conflicts_with = "planted")]
        input: Option<PathBuf>,
        /// Use the built-in planted-topic dataset instead of a file.
        #[arg(long)]
        planted: bool,
        #[arg(long)]
        min_degree: Option<usize>,
    },
    /// Train BPR-MF on the training split and write the embedding files.
    Pretrain {
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        dim: Option<usize>,
    },
    /// Jointly train the selector and generator.
    Train {
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Write a synthetic training set and its replacement audit file.
    Generate {
        #[arg(long)]
        k: Option<f64>,
        #[arg(long)]
        gamma: Option<f64>,
        /// `<user> <k> <gamma>` per line; overrides --k and --gamma.
        #[arg(long)]
        prefs_file: Option<PathBuf>,
        /// Output stem inside the out dir.
        #[arg(long, default_value = "synthetic")]
        name: String,
    },
    /// Score a recommender trained on the original or a released training set.
    Evaluate {
        #[arg(long, value_enum)]
        model: Option<EvalModel>,
        #[arg(long)]
        top_n: Option<usize>,
        /// Released training file (dense `<user> <item>` lines); defaults to the original.
        #[arg(long)]
        train: Option<PathBuf>,
    },
    /// Generate and score every ablation variant over the k grid.
    Ablate {
        #[arg(long, value_delimiter = ',')]
        ks: Option<Vec<f64>>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        top_n: Option<usize>,
    },
    /// Mean recorded relative similarity across a grid of sensitivities.
    Report {
        #[arg(long, value_delimiter = ',')]
        gammas: Option<Vec<f64>>,
        #[arg(long)]
        k: Option<f64>,
    },
}

fn resolve(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.common.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.common.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &cli.common.out_dir {
        cfg.out_dir = dir.clone();
    }
    cfg.deterministic |= cli.common.deterministic;
    cfg.train.deterministic |= cfg.deterministic;
    cfg.train.seed = cfg.seed;
    match &cli.command {
        Command::Ingest { input, min_degree, .. } => {
            if input.is_some() {
                cfg.dataset.raw = input.clone();
            }
            if let Some(m) = min_degree {
                cfg.dataset.min_degree = *m;
            }
        }
        Command::Pretrain { epochs, dim } => {
            if let Some(e) = epochs {
                cfg.pretrain.epochs = *e;
            }
            if let Some(d) = dim {
                cfg.pretrain.dim = *d;
            }
        }
        Command::Train { epochs } => {
            if let Some(e) = epochs {
                cfg.train.epochs = *e;
            }
        }
        Command::Generate { k, gamma, prefs_file, .. } => {
            if let Some(k) = k {
                cfg.generate.k = *k;
            }
            if let Some(g) = gamma {
                cfg.generate.gamma = *g;
            }
            if prefs_file.is_some() {
                cfg.generate.prefs_file = prefs_file.clone();
            }
        }
        Command::Evaluate { model, top_n, .. } => {
            if let Some(m) = model {
                cfg.evaluate.model = *m;
            }
            if let Some(n) = top_n {
                cfg.evaluate.top_n = *n;
            }
        }
        Command::Ablate { ks, gamma, top_n } => {
            if let Some(ks) = ks {
                cfg.ablate.ks = ks.clone();
            }
            if let Some(g) = gamma {
                cfg.ablate.gamma = *g;
            }
            if let Some(n) = top_n {
                cfg.evaluate.top_n = *n;
            }
        }
        Command::Report { gammas, k } => {
            if let Some(g) = gammas {
                cfg.report.gammas = g.clone();
            }
            if let Some(k) = k {
                cfg.report.k = *k;
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = resolve(&cli)?;
    match cli.command {
        Command::Ingest { planted, .. } => commands::ingest(&cfg, planted),
        Command::Pretrain { .. } => commands::pretrain(&cfg),
        Command::Train { .. } => commands::train(&cfg),
        Command::Generate { name, .. } => commands::generate(&cfg, &name),
        Command::Evaluate { train, .. } => commands::evaluate(&cfg, train.as_deref()),
        Command::Ablate { .. } => commands::ablate(&cfg),
        Command::Report { .. } => commands::report(&cfg),
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
