//! Run configuration: every module parameter in one JSON document.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sidgen_core::diffusion::{ModelConfig, TrainConfig};
use sidgen_core::folding::ContextMode;
use sidgen_core::schedule::{CurriculumParams, NoiseSchedule};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parsing config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn d_min_len() -> usize {
    50
}
fn d_max_len() -> usize {
    1500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Tab-separated pairs; the built-in toy set is used when absent.
    #[serde(default)]
    pub tsv: Option<PathBuf>,
    #[serde(default = "d_min_len")]
    pub min_protein_len: usize,
    #[serde(default = "d_max_len")]
    pub max_protein_len: usize,
    /// Seed of the stand-in protein embeddings.
    #[serde(default)]
    pub embed_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            tsv: None,
            min_protein_len: d_min_len(),
            max_protein_len: d_max_len(),
            embed_seed: 0,
        }
    }
}

fn d_n() -> usize {
    64
}
fn d_sample_steps() -> usize {
    32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleConfig {
    #[serde(default = "d_n")]
    pub n: usize,
    #[serde(default = "d_sample_steps")]
    pub steps: usize,
    /// Target protein; the first training protein when absent.
    #[serde(default)]
    pub protein: Option<String>,
    /// Precomputed embedding for `protein`.
    #[serde(default)]
    pub embedding: Option<PathBuf>,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            n: d_n(),
            steps: d_sample_steps(),
            protein: None,
            embedding: None,
        }
    }
}

fn d_out() -> PathBuf {
    PathBuf::from("runs/default")
}
fn d_ckpt_every() -> u64 {
    500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "d_out")]
    pub dir: PathBuf,
    /// Checkpoint period in steps; 0 writes only the final checkpoint.
    #[serde(default = "d_ckpt_every")]
    pub checkpoint_every: u64,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: d_out(),
            checkpoint_every: d_ckpt_every(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[derive(Default)]
pub struct RunConfig {
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub schedule: NoiseSchedule,
    #[serde(default)]
    pub curriculum: CurriculumParams,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub sample: SampleConfig,
    #[serde(default)]
    pub output: OutputConfig,
}


/// Command-line overrides applied after loading.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub mode: Option<ContextMode>,
    pub stride: Option<usize>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn apply(&mut self, o: Overrides) -> Result<(), ConfigError> {
        if let Some(s) = o.seed {
            self.train.seed = s;
        }
        if let Some(m) = o.mode {
            self.model.mode = m;
        }
        if let Some(s) = o.stride {
            self.model.fold.stride = s;
        }
        self.validate()
    }

    /// Checks everything except the vocabulary size, which comes from data.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let inv = |e: String| ConfigError::Invalid(e);
        let mut model = self.model.clone();
        if model.decoder.vocab == 0 {
            model.decoder.vocab = 1;
        }
        model.validate().map_err(|e| inv(e.to_string()))?;
        self.schedule.validate().map_err(inv)?;
        self.curriculum.validate().map_err(inv)?;
        self.train.validate().map_err(|e| inv(e.to_string()))?;
        if self.data.min_protein_len == 0 || self.data.min_protein_len > self.data.max_protein_len {
            return Err(inv("protein length bounds are empty".into()));
        }
        if self.sample.n == 0 || self.sample.steps == 0 {
            return Err(inv("sample.n and sample.steps must be positive".into()));
        }
        Ok(())
    }
}
