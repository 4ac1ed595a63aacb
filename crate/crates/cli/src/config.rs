//! Pipeline configuration file (TOML). Every section is optional; missing
//! keys take the defaults of the final challenge submission.

use std::path::{Path, PathBuf};

use petseg_core::augment::AugmentParams;
use petseg_core::inference::InferenceConfig;
use petseg_core::metrics::{Connectivity, EvalOptions};
use petseg_core::preprocess::{NormStats, AUTOPET_SPACING};
use petseg_core::Spacing;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Root of all randomness (augmentation draws, random weights).
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    pub preprocess: PreprocessSection,
    pub normalization: NormStats,
    pub augment: AugmentParams,
    pub inference: InferenceSection,
    pub metrics: MetricsSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessSection {
    pub target_spacing: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferenceSection {
    pub patch_shape: [usize; 3],
    pub step_fraction: f64,
    pub gaussian_sigma_scale: f64,
    /// One UNW1 weight file per fold.
    pub folds: Vec<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsSection {
    pub connectivity: Connectivity,
    pub empty_empty_dice: f64,
}

impl Default for PreprocessSection {
    fn default() -> Self {
        PreprocessSection {
            target_spacing: AUTOPET_SPACING,
        }
    }
}

impl Default for InferenceSection {
    fn default() -> Self {
        let d = InferenceConfig::default();
        InferenceSection {
            patch_shape: d.patch_shape,
            step_fraction: d.step_fraction,
            gaussian_sigma_scale: d.gaussian_sigma_scale,
            folds: Vec::new(),
        }
    }
}

impl Default for MetricsSection {
    fn default() -> Self {
        let d = EvalOptions::default();
        MetricsSection {
            connectivity: d.connectivity,
            empty_empty_dice: d.empty_empty_dice,
        }
    }
}

impl InferenceSection {
    pub fn to_config(&self) -> InferenceConfig {
        InferenceConfig {
            patch_shape: self.patch_shape,
            step_fraction: self.step_fraction,
            gaussian_sigma_scale: self.gaussian_sigma_scale,
        }
    }
}

impl MetricsSection {
    pub fn to_options(&self) -> EvalOptions {
        EvalOptions {
            connectivity: self.connectivity,
            empty_empty_dice: self.empty_empty_dice,
        }
    }
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string().trim().replace('\n', " ")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |e: petseg_core::Error| CliError::Config(e.to_string());
        Spacing::new(self.preprocess.target_spacing).map_err(bad)?;
        self.normalization.ct.validate().map_err(bad)?;
        self.normalization.pet.validate().map_err(bad)?;
        self.augment.validate().map_err(bad)?;
        if self.augment.seed != 0 && self.augment.seed != self.seed {
            return Err(CliError::Config("set the seed at the top level, not in [augment]".into()));
        }
        self.inference.to_config().validate(1).map_err(bad)?;
        if !(0.0..=1.0).contains(&self.metrics.empty_empty_dice) {
            return Err(CliError::Config(format!(
                "metrics.empty_empty_dice {} must lie in [0, 1]",
                self.metrics.empty_empty_dice
            )));
        }
        if self.threads == Some(0) {
            return Err(CliError::Config("threads must be >= 1".into()));
        }
        Ok(())
    }

    /// Augmentation parameters seeded from the top-level seed.
    pub fn augment_params(&self) -> AugmentParams {
        AugmentParams {
            seed: self.seed,
            ..self.augment
        }
    }
}
