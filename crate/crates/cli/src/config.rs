//! TOML run configuration. Every section is optional and falls back to the
//! library defaults; command-line flags override file values.

use std::path::Path;

use serde::Deserialize;
use speechstack::decode::ConfidenceConfig;
use speechstack::dfsmn::{CorpusSpec, DfsmnConfig, TrainConfig};
use speechstack::features::FbankConfig;
use speechstack::metrics::CerConfig;
use speechstack::pipeline::PipelineConfig;
use speechstack::vad_post::{MvadConfig, PostprocessConfig};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub fbank: FbankConfig,
    pub postprocess: PostprocessConfig,
    pub mvad: Option<MvadConfig>,
    pub confidence: Option<ConfidenceConfig>,
    pub pipeline: PipelineConfig,
    pub model: Option<DfsmnConfig>,
    pub train: TrainConfig,
    pub corpus: CorpusSpec,
    pub cer: CerConfig,
}

impl FileConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(toml::from_str(&text)?)
    }

    pub fn mvad(&self) -> MvadConfig {
        self.mvad.clone().unwrap_or_else(|| MvadConfig::uniform(self.postprocess.clone()))
    }

    pub fn pipeline(&self) -> PipelineConfig {
        let mut p = self.pipeline.clone();
        if let Some(c) = &self.confidence {
            p.confidence = c.clone();
        }
        p
    }
}
