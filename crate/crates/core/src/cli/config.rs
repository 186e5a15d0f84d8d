use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::estimator::{MetricKind, DEFAULT_BATCH_FRACTION};
use crate::mitigation::{DEFAULT_FLOOR, DEFAULT_PENALTY_WEIGHT};
use crate::trainer::model::DEFAULT_HIDDEN;
use crate::trainer::{SyntheticSpec, DEFAULT_TRAIN_FRACTION};

pub const SEED_ENV: &str = "FAIRLENS_SEED";

/// Pipeline configuration as read from a TOML file. Every field is optional
/// in the file; command-line flags override file values.
#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    pub data: DataConfig,
    pub baseline: BaselineConfig,
    pub estimator: EstimatorConfig,
    pub loss: LossSection,
    pub trainer: TrainerSection,
    pub synthetic: Option<SyntheticSpec>,
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub images: Option<PathBuf>,
    pub masks: Option<PathBuf>,
    pub distributions: Option<PathBuf>,
    /// CSV `sample_id,label` for training on extracted distributions.
    pub labels: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    pub batch_fraction: f64,
    pub degree_min: usize,
    pub degree_max: usize,
    pub penalty_metric: MetricKind,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            batch_fraction: DEFAULT_BATCH_FRACTION,
            degree_min: 1,
            degree_max: 6,
            penalty_metric: MetricKind::F1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    /// Defaults to 30% of the epoch count.
    pub penalty_start_epoch: Option<usize>,
    pub penalty_weight: f64,
    pub threshold: f64,
    pub floor: f64,
}

impl Default for LossSection {
    fn default() -> Self {
        Self {
            penalty_start_epoch: None,
            penalty_weight: DEFAULT_PENALTY_WEIGHT,
            threshold: 0.5,
            floor: DEFAULT_FLOOR,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ArchitectureName {
    Logistic,
    Mlp,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerSection {
    pub architecture: ArchitectureName,
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub train_fraction: f64,
    pub warm_start: bool,
}

impl Default for TrainerSection {
    fn default() -> Self {
        Self {
            architecture: ArchitectureName::Logistic,
            hidden: DEFAULT_HIDDEN,
            epochs: 120,
            learning_rate: 1.0,
            train_fraction: DEFAULT_TRAIN_FRACTION,
            warm_start: false,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config {path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("{SEED_ENV} must be an unsigned integer, got `{0}`")]
    Seed(String),
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn parse(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    /// Flag, then config file, then `FAIRLENS_SEED`, then 0.
    pub fn resolve_seed(&self, flag: Option<u64>) -> Result<u64, ConfigError> {
        if let Some(s) = flag.or(self.seed) {
            return Ok(s);
        }
        match std::env::var(SEED_ENV) {
            Ok(v) => v.trim().parse().map_err(|_| ConfigError::Seed(v)),
            Err(_) => Ok(0),
        }
    }
}
