use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{SplitConfig, SyntheticGenConfig};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::rejection::{default_alpha, RejectionStrategy, DEFAULT_TAIL_SIZE};
use crate::training::TrainConfig;

/// Where the images come from: a procedurally generated dataset or an
/// existing manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum DataSource {
    Synthetic(SyntheticGenConfig),
    Manifest(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpenMaxParams {
    #[serde(default = "default_tail")]
    pub tail_size: usize,
    /// Defaults to min(N, 3).
    #[serde(default)]
    pub alpha: Option<usize>,
}

fn default_tail() -> usize {
    DEFAULT_TAIL_SIZE
}

impl Default for OpenMaxParams {
    fn default() -> Self {
        Self {
            tail_size: DEFAULT_TAIL_SIZE,
            alpha: None,
        }
    }
}

impl OpenMaxParams {
    pub fn alpha_for(&self, num_classes: usize) -> usize {
        self.alpha.unwrap_or_else(|| default_alpha(num_classes))
    }
}

/// One experiment, read from a JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub split: SplitConfig,
    pub data: DataSource,
    #[serde(default = "all_strategies")]
    pub strategies: Vec<RejectionStrategy>,
    #[serde(default)]
    pub openmax: OpenMaxParams,
    pub output_dir: PathBuf,
}

fn all_strategies() -> Vec<RejectionStrategy> {
    RejectionStrategy::ALL.to_vec()
}

impl ExperimentConfig {
    /// Parses and validates; schema errors carry the JSON path of the
    /// offending field. Relative paths resolve against the config's folder.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        let mut cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            Error::Config(format!("{}: {}: {}", path.display(), e.path(), e.inner()))
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let DataSource::Manifest(m) = &mut cfg.data {
            if m.is_relative() {
                *m = base.join(&*m);
            }
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks that do not need the dataset on disk.
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        let mut problems = Vec::new();
        if self.model.num_classes != self.split.in_set.len() {
            problems.push(format!(
                "model.num_classes is {} but split {} has {} in-set classes",
                self.model.num_classes,
                self.split.name,
                self.split.in_set.len()
            ));
        }
        if self.strategies.is_empty() {
            problems.push("strategies must not be empty".into());
        }
        if self.openmax.tail_size == 0 {
            problems.push("openmax.tail_size must be >= 1".into());
        }
        if let Some(a) = self.openmax.alpha {
            if a == 0 || a > self.model.num_classes {
                problems.push(format!(
                    "openmax.alpha must lie in 1..={}, got {a}",
                    self.model.num_classes
                ));
            }
        }
        if let DataSource::Synthetic(s) = &self.data {
            s.validate()?;
            if s.image_size != self.model.input_height || s.image_size != self.model.input_width {
                log::warn!(
                    "synthetic images are {0}x{0}; they will be resized to {1}x{2}",
                    s.image_size,
                    self.model.input_height,
                    self.model.input_width
                );
            }
            self.split.validate(s.num_classes)?;
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    pub fn needs_openmax(&self) -> bool {
        self.strategies.contains(&RejectionStrategy::OpenMax)
    }
}
