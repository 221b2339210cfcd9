use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use flat_core::attack::AttackConfig;
use flat_core::corpus::SyntheticConfig;
use flat_core::interpret::IgConfig;
use flat_core::model::ModelConfig;
use flat_core::training::FlatConfig;

/// Environment variable overriding the output directory.
pub const OUTPUT_DIR_ENV: &str = "FLAT_OUTPUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Directory holding `train.tsv`, `dev.tsv`, `test.tsv` and `synonyms.tsv`.
    pub dir: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub synonyms: Option<PathBuf>,
    /// Optional `word v1 .. vd` embedding file.
    pub embeddings: Option<PathBuf>,
    /// Padded sequence length; the longest training sentence when absent.
    pub max_len: Option<usize>,
    pub min_freq: usize,
    pub num_classes: Option<usize>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { dir: None, train: None, dev: None, test: None, synonyms: None, embeddings: None, max_len: None, min_freq: 1, num_classes: None }
    }
}

impl DataConfig {
    fn path(&self, explicit: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
        match (explicit, &self.dir) {
            (Some(p), _) => Ok(p.clone()),
            (None, Some(d)) => Ok(d.join(name)),
            (None, None) => anyhow::bail!("no path for {name}: set data.dir or data.{} in the config", name.trim_end_matches(".tsv")),
        }
    }

    pub fn train_path(&self) -> Result<PathBuf> {
        self.path(&self.train, "train.tsv")
    }

    pub fn dev_path(&self) -> Result<PathBuf> {
        self.path(&self.dev, "dev.tsv")
    }

    pub fn test_path(&self) -> Result<PathBuf> {
        self.path(&self.test, "test.tsv")
    }

    pub fn synonyms_path(&self) -> Result<PathBuf> {
        self.path(&self.synonyms, "synonyms.tsv")
    }
}

/// Everything a run reads, after merging the config file, the environment
/// and command-line flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; every component derives a named sub-seed from it.
    pub seed: u64,
    pub out_dir: PathBuf,
    pub jobs: Option<usize>,
    /// Number of word clusters for the group-mask baseline.
    pub clusters: usize,
    /// Top-k sweep for the consistency report.
    pub ks: Vec<usize>,
    pub data: DataConfig,
    pub synthetic: SyntheticConfig,
    pub model: ModelConfig,
    pub train: FlatConfig,
    pub attack: AttackConfig,
    pub ig: IgConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out_dir: PathBuf::from("runs"),
            jobs: None,
            clusters: 20,
            ks: (1..=10).collect(),
            data: DataConfig::default(),
            synthetic: SyntheticConfig::default(),
            model: ModelConfig::default(),
            train: FlatConfig::default(),
            attack: AttackConfig::default(),
            ig: IgConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Pushes the master seed into the component configs and validates them.
    pub fn finish(mut self) -> Result<Self> {
        self.train.seed = self.seed;
        self.synthetic.seed = self.seed;
        self.model.validate()?;
        self.train.validate()?;
        self.attack.validate()?;
        self.ig.validate()?;
        self.synthetic.validate()?;
        if self.ks.is_empty() || self.ks.contains(&0) {
            anyhow::bail!("ks must be a nonempty list of positive integers");
        }
        Ok(self)
    }

    pub fn write_resolved(&self, command: &str) -> Result<PathBuf> {
        let path = self.out_dir.join(format!("{command}.resolved.toml"));
        let text = toml::to_string(self).context("serializing resolved config")?;
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
