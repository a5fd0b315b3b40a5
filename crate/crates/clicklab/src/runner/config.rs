//! Run configuration: TOML on disk, one struct in memory.
//!
//! A config file is flat keys plus nested sections:
//!
//! ```toml
//! seed = 42
//! epochs = 3
//! batch_size = 1024
//!
//! [optimizer]
//! kind = "adam"
//! learning_rate = 1e-3
//! weight_decay = 1e-5
//!
//! [data]
//! source = "synthetic"        # or "csv" with `path = "..."`
//!
//! [data.schema]
//! user_id = "user"
//! sparse = [ { name = "item", cardinality = 200 }, { name = "user", cardinality = 500 } ]
//! dense = ["x0"]
//! sequence = [ { name = "hist", cardinality = 200, max_len = 8 } ]
//!
//! [data.synthetic]
//! samples = 100000
//! latent_dim = 8
//! noise = 0.5
//! base_rate = 0.3
//! seed = 7
//! mix = { linear = 1.0, cross = 1.0, sequence = 1.0 }
//!
//! [split]
//! fractions = [0.8, 0.1, 0.1]
//! seed = 11
//!
//! [[components]]
//! kind = "cross_net"
//! depth = 2
//! hidden = 64
//! d_out = 16
//! embedding_dim = 16
//!
//! [fusion]
//! mode = "weighted_concat"
//! alpha = 0.5
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::data::{FeatureSchema, MixWeights, SyntheticSpec};
use crate::model::EnsembleSpec;
use crate::optim::OptimizerConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synthetic,
    Csv,
}

/// Synthetic-generator knobs; the schema lives next to them in [`DataConfig`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub samples: usize,
    pub latent_dim: usize,
    pub mix: MixWeights,
    pub noise: f64,
    pub base_rate: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataConfig {
    pub source: DataSource,
    #[serde(default)]
    pub path: Option<PathBuf>,
    pub schema: FeatureSchema,
    #[serde(default)]
    pub synthetic: Option<SyntheticConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitConfig {
    pub fractions: [f64; 3],
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            fractions: [0.8, 0.1, 0.1],
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Run the validation evaluation every this many epochs.
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    /// Sample the NE learning curve every this many optimizer steps
    /// (one-epoch runs).
    #[serde(default = "default_ne_every")]
    pub ne_curve_every: usize,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    /// Free-form label distinguishing derived configs (sweep cells, ablation
    /// variants); participates in the config hash.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
    pub data: DataConfig,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(flatten)]
    pub model: EnsembleSpec,
}

fn default_seed() -> u64 {
    42
}

fn default_epochs() -> usize {
    1
}

fn default_batch_size() -> usize {
    1024
}

fn default_eval_every() -> usize {
    1
}

fn default_ne_every() -> usize {
    50
}

impl TrainConfig {
    pub fn from_toml_str(text: &str) -> Result<TrainConfig, ConfigError> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<TrainConfig, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.epochs == 0 {
            return Err(ConfigError::Invalid("epochs must be >= 1".to_string()));
        }
        if self.batch_size == 0 {
            return Err(ConfigError::Invalid("batch_size must be >= 1".to_string()));
        }
        if self.eval_every == 0 || self.ne_curve_every == 0 {
            return Err(ConfigError::Invalid(
                "eval_every and ne_curve_every must be >= 1".to_string(),
            ));
        }
        if !(self.optimizer.learning_rate > 0.0) {
            return Err(ConfigError::Invalid("learning_rate must be > 0".to_string()));
        }
        if self.optimizer.weight_decay < 0.0 {
            return Err(ConfigError::Invalid("weight_decay must be >= 0".to_string()));
        }
        if self.model.components.is_empty() {
            return Err(ConfigError::Invalid("at least one component required".to_string()));
        }
        if self.model.fusion.alpha < 0.0 {
            return Err(ConfigError::Invalid("alpha must be >= 0".to_string()));
        }
        self.data
            .schema
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        match self.data.source {
            DataSource::Synthetic => {
                if self.data.synthetic.is_none() {
                    return Err(ConfigError::Invalid(
                        "source = \"synthetic\" needs a [data.synthetic] section".to_string(),
                    ));
                }
            }
            DataSource::Csv => {
                if self.data.path.is_none() {
                    return Err(ConfigError::Invalid(
                        "source = \"csv\" needs a data path".to_string(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Assembles the full synthetic spec (schema + knobs) when configured.
    pub fn synthetic_spec(&self) -> Option<SyntheticSpec> {
        self.data.synthetic.as_ref().map(|s| SyntheticSpec {
            schema: self.data.schema.clone(),
            samples: s.samples,
            latent_dim: s.latent_dim,
            mix: s.mix,
            noise: s.noise,
            base_rate: s.base_rate,
            seed: s.seed,
        })
    }

    /// Canonical JSON used for hashing and checkpoint embedding.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical JSON.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_json().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Output directory with the `CLICKLAB_OUT_ROOT` env var applied to
    /// relative paths.
    pub fn resolved_out_dir(&self, cli_override: Option<&Path>) -> Option<PathBuf> {
        let dir = cli_override.map(Path::to_path_buf).or_else(|| self.out_dir.clone())?;
        if dir.is_absolute() {
            return Some(dir);
        }
        match std::env::var_os("CLICKLAB_OUT_ROOT") {
            Some(root) => Some(PathBuf::from(root).join(dir)),
            None => Some(dir),
        }
    }
}

/// Config for the data-generation subcommand: just a schema and the
/// generator knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenDataConfig {
    pub schema: FeatureSchema,
    pub synthetic: SyntheticConfig,
}

impl GenDataConfig {
    pub fn from_toml_str(text: &str) -> Result<GenDataConfig, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<GenDataConfig, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            schema: self.schema.clone(),
            samples: self.synthetic.samples,
            latent_dim: self.synthetic.latent_dim,
            mix: self.synthetic.mix,
            noise: self.synthetic.noise,
            base_rate: self.synthetic.base_rate,
            seed: self.synthetic.seed,
        }
    }
}
