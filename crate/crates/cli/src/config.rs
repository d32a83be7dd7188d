//! The run configuration document.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use rgnet_core::config::{AsppConfig, EncoderConfig, GraphConfig, HeadConfig, ModelConfig, ModelVariant, Task, TrainConfig};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub manifest: Option<PathBuf>,
    pub test_manifest: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub seeds: Vec<u64>,
    pub variants: Vec<ModelVariant>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            seeds: vec![0, 1, 2],
            variants: ModelVariant::ALL.to_vec(),
        }
    }
}

/// Everything one command needs: the model, the training protocol, the data
/// locations and the numeric precision.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub variant: ModelVariant,
    pub task: Task,
    pub precision: Precision,
    pub encoder: EncoderConfig,
    pub aspp: AsppConfig,
    pub graph: GraphConfig,
    pub head: HeadConfig,
    pub train: TrainConfig,
    pub paths: Paths,
    pub ablation: AblationConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("config: {}", e.message().trim())))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.paths.resolve_against(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configs serialize")
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            variant: self.variant,
            task: self.task,
            encoder: self.encoder.clone(),
            aspp: self.aspp.clone(),
            graph: self.graph.clone(),
            head: self.head.clone(),
        }
    }

    /// Checks the model and training sections together.
    pub fn validate(&self) -> CliResult<()> {
        self.model().validate()?;
        self.train.validate(self.task)?;
        if self.ablation.seeds.is_empty() || self.ablation.variants.is_empty() {
            return Err(CliError::Config("ablation needs at least one seed and one variant".into()));
        }
        Ok(())
    }
}

impl Paths {
    /// Relative paths in a config file are taken relative to that file.
    fn resolve_against(&mut self, base: &Path) {
        for p in [
            &mut self.manifest,
            &mut self.test_manifest,
            &mut self.out_dir,
            &mut self.checkpoint,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}
