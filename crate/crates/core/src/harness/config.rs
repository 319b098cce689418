use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::diffusion::{ConditioningVariant, DenoiserConfig, DiffusionTrainConfig, TargetMode};
use crate::error::{Error, Result};
use crate::metrics::MetricConventions;
use crate::segmenter::{SegmenterConfig, TrainConfig, DEFAULT_THRESHOLD};

/// Version of the experiment config layout understood by this build.
pub const SCHEMA_VERSION: u32 = 1;

/// One model arm of the study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Arm {
    /// The baseline segmenter on its own.
    Baseline,
    /// Diffusion generating the mask directly, under a conditioning variant.
    MaskDiffusion(ConditioningVariant),
    /// Diffusion generating the baseline's errors, which are then flipped.
    DiscrepancyDiffusion,
}

impl Arm {
    pub const ALL: [Arm; 5] = [
        Arm::Baseline,
        Arm::MaskDiffusion(ConditioningVariant::PredOnly),
        Arm::MaskDiffusion(ConditioningVariant::ConcatMriPred),
        Arm::MaskDiffusion(ConditioningVariant::MaskedMri),
        Arm::DiscrepancyDiffusion,
    ];

    pub fn name(self) -> String {
        match self {
            Arm::Baseline => "baseline".into(),
            Arm::MaskDiffusion(v) => format!("mask-diff-{}", v.as_str()),
            Arm::DiscrepancyDiffusion => "discrepancy-diff".into(),
        }
    }

    pub fn is_diffusion(self) -> bool {
        self != Arm::Baseline
    }

    pub fn target(self) -> Option<TargetMode> {
        match self {
            Arm::Baseline => None,
            Arm::MaskDiffusion(_) => Some(TargetMode::DirectMask),
            Arm::DiscrepancyDiffusion => Some(TargetMode::Discrepancy),
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for Arm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Arm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown arm {s:?}")))
    }
}

impl TryFrom<String> for Arm {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Arm> for String {
    fn from(a: Arm) -> String {
        a.name()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSection {
    pub model: SegmenterConfig,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffusionSection {
    /// Shared by every diffusion arm; mask arms override the conditioning
    /// variant and every arm sets its own target.
    pub model: DenoiserConfig,
    pub train: DiffusionTrainConfig,
}

impl Default for DiffusionSection {
    fn default() -> Self {
        Self {
            model: DenoiserConfig::default(),
            train: DiffusionTrainConfig::default(),
        }
    }
}

/// Full description of a cross-validation study.
///
/// Relative paths are resolved against the directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default = "default_data_dir")]
    pub data_dir: PathBuf,
    #[serde(default = "default_run_dir")]
    pub run_dir: PathBuf,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_arms")]
    pub arms: Vec<Arm>,
    #[serde(default = "default_threshold")]
    pub threshold: f32,
    #[serde(default)]
    pub baseline: BaselineSection,
    #[serde(default)]
    pub diffusion: DiffusionSection,
    #[serde(default)]
    pub metrics: MetricConventions,
}

fn default_data_dir() -> PathBuf {
    PathBuf::from("data")
}

fn default_run_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn default_folds() -> usize {
    5
}

fn default_arms() -> Vec<Arm> {
    vec![
        Arm::Baseline,
        Arm::MaskDiffusion(ConditioningVariant::ConcatMriPred),
        Arm::DiscrepancyDiffusion,
    ]
}

fn default_threshold() -> f32 {
    DEFAULT_THRESHOLD
}

impl ExperimentConfig {
    pub fn new(data_dir: impl Into<PathBuf>, run_dir: impl Into<PathBuf>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            data_dir: data_dir.into(),
            run_dir: run_dir.into(),
            folds: default_folds(),
            seed: 0,
            arms: default_arms(),
            threshold: default_threshold(),
            baseline: BaselineSection::default(),
            diffusion: DiffusionSection::default(),
            metrics: MetricConventions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::InvalidConfig(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.folds < 2 {
            return Err(Error::InvalidConfig(format!("folds must be >= 2, got {}", self.folds)));
        }
        if self.arms.is_empty() {
            return Err(Error::InvalidConfig("at least one arm is required".into()));
        }
        let mut seen = self.arms.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.arms.len() {
            return Err(Error::InvalidConfig("arms must not repeat".into()));
        }
        if self.arms.iter().any(|a| a.is_diffusion()) && !self.arms.contains(&Arm::Baseline) {
            return Err(Error::InvalidConfig("diffusion arms need the baseline arm".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::InvalidConfig(format!("threshold must lie in (0,1), got {}", self.threshold)));
        }
        self.baseline.model.validate()?;
        self.diffusion.model.validate()?;
        Ok(())
    }

    /// Arms in execution order: baseline first, then the rest as listed.
    pub fn ordered_arms(&self) -> Vec<Arm> {
        let mut arms: Vec<Arm> = self.arms.iter().copied().filter(|a| *a == Arm::Baseline).collect();
        arms.extend(self.arms.iter().copied().filter(|a| *a != Arm::Baseline));
        arms
    }

    /// Denoiser configuration used by a diffusion arm.
    pub fn denoiser_config(&self, arm: Arm) -> Option<DenoiserConfig> {
        let mut cfg = self.diffusion.model;
        cfg.target = arm.target()?;
        if let Arm::MaskDiffusion(v) = arm {
            cfg.conditioning.variant = v;
        }
        cfg.conditioning.threshold = self.threshold;
        Some(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Toml(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file and resolves its relative paths.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.data_dir, &mut cfg.run_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Toml(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = ExperimentConfig::from_toml("schema_version = 1\n").unwrap();
        assert_eq!(cfg.data_dir, PathBuf::from("data"));
        assert_eq!(cfg.folds, 5);
        assert_eq!(cfg.arms, default_arms());
        assert_eq!(cfg.baseline.train.optimizer.lr, 1e-4);
    }

    #[test]
    fn readme_example_parses() {
        let readme = include_str!("../../../../README.md");
        let block = readme.split("```toml\n").nth(1).unwrap().split("```").next().unwrap();
        let cfg = ExperimentConfig::from_toml(block).unwrap();
        assert_eq!(cfg, {
            let mut d = ExperimentConfig::from_toml("schema_version = 1\n").unwrap();
            d.seed = 2024;
            d
        });
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = ExperimentConfig::new("d", "r");
        cfg.arms = Arm::ALL.to_vec();
        cfg.diffusion.train.optimizer.lr = 3e-3;
        let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn validation() {
        let base = "schema_version = 1\ndata_dir = \"d\"\nrun_dir = \"r\"\n";
        assert!(ExperimentConfig::from_toml(&format!("{base}folds = 1\n")).is_err());
        assert!(ExperimentConfig::from_toml(&format!("{base}arms = []\n")).is_err());
        assert!(ExperimentConfig::from_toml(&format!("{base}arms = [\"discrepancy-diff\"]\n")).is_err());
        assert!(ExperimentConfig::from_toml(&format!("{base}arms = [\"bogus\"]\n")).is_err());
        assert!(ExperimentConfig::from_toml(&format!("{base}unknown_key = 3\n")).is_err());
        assert!(ExperimentConfig::from_toml("schema_version = 2\ndata_dir = \"d\"\nrun_dir = \"r\"\n").is_err());
    }

    #[test]
    fn arm_names_round_trip() {
        for arm in Arm::ALL {
            assert_eq!(arm.name().parse::<Arm>().unwrap(), arm);
        }
        let cfg = ExperimentConfig::new("d", "r");
        let concat = cfg.denoiser_config(Arm::MaskDiffusion(ConditioningVariant::PredOnly)).unwrap();
        assert_eq!(concat.conditioning.variant, ConditioningVariant::PredOnly);
        assert_eq!(concat.target, TargetMode::DirectMask);
        assert!(cfg.denoiser_config(Arm::Baseline).is_none());
    }
}
