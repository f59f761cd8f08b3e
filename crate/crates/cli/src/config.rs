use std::path::Path;

use mmreg::icon::LossConfig;
use mmreg::metrics::MtreDirection;
use mmreg::pipeline::OptimizerConfig;
use mmreg::sampling::{SamplingStrategy, WeightMode, PAIRS_PER_EPOCH};
use mmreg::synthetic::ModalityRemap;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Everything a command can be configured with. Each command reads its own
/// sections; absent keys take their defaults and unknown keys are rejected.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub loss: LossConfig,
    pub optimizer: OptimizerConfig,
    pub synth: SynthConfig,
    pub plan: PlanConfig,
    pub evaluate: EvaluateConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub dims: [usize; 3],
    pub structures: usize,
    pub deformation_seed: u64,
    /// Bump amplitude in voxels.
    pub amplitude: f64,
    pub bumps: usize,
    pub remap_a: ModalityRemap,
    pub remap_b: ModalityRemap,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 1,
            dims: [32; 3],
            structures: 4,
            deformation_seed: 2,
            amplitude: 3.0,
            bumps: 2,
            remap_a: ModalityRemap::Identity,
            remap_b: ModalityRemap::Invert,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightSource {
    /// Percentages stored in the manifests.
    Configured,
    /// Computed from modalities and regions.
    Derived,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanConfig {
    pub strategy: SamplingStrategy,
    pub pairs: usize,
    pub seed: u64,
    /// Weighted epoch assembly instead of uniform dataset choice.
    pub epoch: bool,
    pub weights: WeightSource,
    pub mode: WeightMode,
}

impl Default for PlanConfig {
    fn default() -> Self {
        PlanConfig {
            strategy: SamplingStrategy::F,
            pairs: PAIRS_PER_EPOCH,
            seed: 0,
            epoch: false,
            weights: WeightSource::Configured,
            mode: WeightMode::Training,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    /// `source_to_target` scores the B-to-A map on source landmarks.
    pub mtre_direction: MtreDirection,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<RunConfig, CliError> {
        let cfg: RunConfig = match path {
            None => RunConfig::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
        };
        cfg.loss.validate().map_err(|e| CliError::Config(e.to_string()))?;
        cfg.optimizer.validate().map_err(|e| CliError::Config(e.to_string()))?;
        cfg.synth.remap_a.validate().map_err(|e| CliError::Config(e.to_string()))?;
        cfg.synth.remap_b.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }
}
