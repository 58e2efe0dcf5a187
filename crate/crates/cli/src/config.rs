//! The JSON run configuration: one document covering the generator, the
//! discriminator, training, blur synthesis and metric selection. Unknown
//! keys are rejected so typos fail loudly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use dgf_core::dataset::SynthConfig;
use dgf_core::discriminator::DiscriminatorConfig;
use dgf_core::generator::GeneratorConfig;
use dgf_core::metrics::MetricToggles;
use dgf_core::train::TrainConfig;
use dgf_core::{Error, Result};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub metrics: MetricToggles,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.generator.validate()?;
        cfg.discriminator.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<RunConfig> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(RunConfig::default()),
        }
    }
}
