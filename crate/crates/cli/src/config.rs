//! Run configuration: every tunable of the pipeline in one TOML
//! document, with full defaulting. Unknown keys are rejected so typos
//! fail loudly instead of silently training with defaults.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use apr_core::data::{PreprocessConfig, SyntheticWorldConfig};
use apr_core::image::IMAGE_SIZE;
use apr_core::model::{AprConfig, Modality};
use apr_core::service::ServiceConfig;
use apr_core::train::TrainConfig;
use apr_core::{AprError, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: AprConfig,
    pub train: TrainConfig,
    pub synth: SyntheticWorldConfig,
    pub preprocess: PreprocessConfig,
    pub service: ServiceConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path).map_err(|e| AprError::io(path, e))?;
        let cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| AprError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.synth.validate()?;
        // The file formats fix the map side: PPM payloads decode to
        // IMAGE_SIZE and clouds rasterize to BEV_SIZE. Only the point
        // path is free of that constraint.
        if self.model.modality != Modality::Points && self.model.input_size != IMAGE_SIZE {
            return Err(AprError::Config(format!(
                "modality {} reads {}x{} payloads but model.input_size is {}",
                self.model.modality, IMAGE_SIZE, IMAGE_SIZE, self.model.input_size
            )));
        }
        Ok(())
    }

    /// Serialized effective configuration. Loading the returned text as
    /// a config file reproduces this value exactly, so an echoed config
    /// reruns the same seeded experiment.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| AprError::Config(e.to_string()))
    }
}
