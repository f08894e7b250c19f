//! Pipeline configuration: a TOML file whose values are overridden by flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;
use synthrec::mf::BprConfig;
use synthrec::trainer::TrainConfig;

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub deterministic: bool,
    pub dataset: DatasetSection,
    pub pretrain: PretrainSection,
    pub train: TrainConfig,
    pub generate: GenerateSection,
    pub evaluate: EvaluateSection,
    pub ablate: AblateSection,
    pub report: ReportSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("out"),
            deterministic: false,
            dataset: DatasetSection::default(),
            pretrain: PretrainSection::default(),
            train: TrainConfig::default(),
            generate: GenerateSection::default(),
            evaluate: EvaluateSection::default(),
            ablate: AblateSection::default(),
            report: ReportSection::default(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    /// Raw `user,item[,...]` log.
    pub raw: Option<PathBuf>,
    pub min_degree: usize,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self { raw: None, min_degree: 10 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainSection {
    pub dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub batch_size: usize,
    pub init_scale: f64,
}

impl Default for PretrainSection {
    fn default() -> Self {
        let b = BprConfig::default();
        Self {
            dim: b.dim,
            epochs: b.epochs,
            learning_rate: b.learning_rate,
            l2: b.l2,
            batch_size: b.batch_size,
            init_scale: b.init_scale,
        }
    }
}

impl PretrainSection {
    pub fn bpr(&self, seed: u64) -> BprConfig {
        BprConfig {
            dim: self.dim,
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            l2: self.l2,
            batch_size: self.batch_size,
            init_scale: self.init_scale,
            seed,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateSection {
    pub k: f64,
    pub gamma: f64,
    pub prefs_file: Option<PathBuf>,
}

impl Default for GenerateSection {
    fn default() -> Self {
        Self {
            k: 0.5,
            gamma: 0.5,
            prefs_file: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum EvalModel {
    Random,
    Bprmf,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    pub model: EvalModel,
    pub top_n: usize,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        Self {
            model: EvalModel::Bprmf,
            top_n: 20,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateSection {
    pub ks: Vec<f64>,
    pub gamma: f64,
    pub fixed_similarity: f64,
}

impl Default for AblateSection {
    fn default() -> Self {
        Self {
            ks: vec![0.2, 0.4, 0.6, 0.8],
            gamma: 0.9,
            fixed_similarity: 0.9,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSection {
    pub gammas: Vec<f64>,
    pub k: f64,
}

impl Default for ReportSection {
    fn default() -> Self {
        Self {
            gammas: vec![0.1, 0.3, 0.5, 0.7, 0.9],
            k: 0.5,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        let open_unit = |x: f64| x > 0.0 && x < 1.0;
        for (name, v) in [("generate.k", self.generate.k), ("generate.gamma", self.generate.gamma), ("report.k", self.report.k), ("ablate.gamma", self.ablate.gamma)] {
            if !open_unit(v) {
                bail!("{name} = {v} is not in (0, 1)");
            }
        }
        for (name, grid) in [("ablate.ks", &self.ablate.ks), ("report.gammas", &self.report.gammas)] {
            if grid.is_empty() || !grid.iter().all(|&v| open_unit(v)) {
                bail!("{name} must be a non-empty list of values in (0, 1)");
            }
        }
        if self.evaluate.top_n == 0 {
            bail!("evaluate.top_n must be positive");
        }
        self.train.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_are_optional() {
        let cfg: PipelineConfig = toml::from_str("seed = 4\n[train]\nepochs = 3\n").unwrap();
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.batch_size, TrainConfig::default().batch_size);
        assert_eq!(cfg.evaluate.top_n, 20);
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_and_bad_grids_rejected() {
        assert!(toml::from_str::<PipelineConfig>("sed = 1\n").is_err());
        let cfg: PipelineConfig = toml::from_str("[ablate]\nks = [0.2, 1.0]\n").unwrap();
        assert!(cfg.validate().is_err());
    }
}
