use std::path::Path;

use serde::{Deserialize, Serialize};
use valence_core::cohort::SynthConfig;
use valence_core::embedder::EmbedderConfig;
use valence_core::harness::{ExperimentConfig, FeatureConfig};
use valence_core::seed::Seed;

use crate::CliError;

/// Settings shared by every command. A `--config` file provides the base;
/// explicit flags are applied on top.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: Option<Seed>,
    pub synth: SynthConfig,
    pub features: FeatureConfig,
    pub experiment: ExperimentConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let mut cfg = match path {
            None => RunConfig::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("bad config {}: {e}", p.display())))?
            }
        };
        // without a top-level seed, everything follows the cohort seed
        let seed = cfg.seed.unwrap_or(cfg.synth.seed);
        cfg.set_seed(seed);
        Ok(cfg)
    }

    /// Points every component at `seed`; the embedder gets a derived seed.
    pub fn set_seed(&mut self, seed: Seed) {
        self.seed = Some(seed);
        self.synth.seed = seed;
        self.features.seed = seed;
        self.features.embedder = EmbedderConfig {
            seed: seed.derive("embedder"),
            ..self.features.embedder.clone()
        };
        self.experiment.seed = seed;
    }
}
