use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clutter_core::distill::SupervisedConfig;
use clutter_core::env::{ActionMode, GeneratorConfig, GeneratorEnv};
use clutter_core::eval::Variant;
use clutter_core::observation::ObservationConfig;
use clutter_core::ppo::TrainConfig;
use clutter_core::scene::{QueriedRegion, SceneSpec, TableSpec};
use serde::{Deserialize, Serialize};

/// Everything a run needs. Loaded from TOML, then patched by flags, and
/// written back fully materialized next to the run's outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub jobs: usize,
    pub out: PathBuf,
    pub variant: Variant,
    pub scene: SceneConfig,
    pub generator: GeneratorConfig,
    pub observation: ObservationConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub distill: DistillConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            jobs: 1,
            out: PathBuf::from("runs/latest"),
            variant: Variant::Full,
            scene: SceneConfig::default(),
            generator: GeneratorConfig::default(),
            observation: ObservationConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            distill: DistillConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableChoice {
    /// 0.60 × 0.70 m.
    Standard,
    /// 1.40 × 1.40 m.
    Enlarged,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub table: TableChoice,
    /// Index of the procedural object group.
    pub group: usize,
    pub objects: usize,
    /// Half extents (x, y, height) of a region centered on the table. The
    /// region covers the whole top when absent.
    pub region: Option<[f64; 3]>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            table: TableChoice::Standard,
            group: 0,
            objects: 10,
            region: None,
        }
    }
}

impl SceneConfig {
    pub fn spec(&self) -> SceneSpec {
        let table = match self.table {
            TableChoice::Standard => TableSpec::standard(),
            TableChoice::Enlarged => TableSpec::enlarged(),
        };
        let region = match self.region {
            Some([x, y, z]) => QueriedRegion::centered(&table, x, y, z),
            None => QueriedRegion::covering(&table, 0.15),
        };
        SceneSpec::from_group(table, region, self.group, self.objects)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    /// Success rate, stable steps and attempt histogram.
    Standard,
    /// Original region plus every region change.
    Generalization,
    /// Coverage of successful placements.
    Diversity,
    /// Success and stable steps as the attempt budget varies.
    Attempts,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub episodes: usize,
    pub mode: ActionMode,
    pub suite: Suite,
    pub budgets: Vec<usize>,
    /// Side of the square PGM written by the diversity suite (pixels).
    pub map_size: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            episodes: 500,
            mode: ActionMode::Sample,
            suite: Suite::Standard,
            budgets: (1..=8).collect(),
            map_size: 128,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillConfig {
    /// Generation episodes feeding the dataset.
    pub scenes: usize,
    /// Samples kept in the exported dataset.
    pub samples: usize,
    /// Extra generation episodes exported as held-out placement problems.
    pub holdout_scenes: usize,
    pub resolution: usize,
    /// Training-set sizes compared by `distill`; 0 means every sample.
    pub sizes: Vec<usize>,
    pub supervised: SupervisedConfig,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            scenes: 400,
            samples: 5000,
            holdout_scenes: 50,
            resolution: 16,
            sizes: vec![200, 5000],
            supervised: SupervisedConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let de = toml::Deserializer::new(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            clutter_core::Error::Parse {
                path,
                message: e.into_inner().message().to_string(),
            }
        })?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run configs always serialize")
    }

    pub fn validate(&self) -> Result<()> {
        if self.jobs == 0 {
            anyhow::bail!(clutter_core::Error::InvalidConfig("jobs must be at least 1".into()));
        }
        self.scene.spec().validate()?;
        self.generator.validate()?;
        self.train.validate()?;
        Ok(())
    }

    /// Environment for this run's scene with the observation layout of the
    /// configured variant.
    pub fn env(&self) -> Result<GeneratorEnv> {
        let (obs, _) = self.variant.configure(&self.observation, &self.train);
        self.env_with(obs)
    }

    pub fn env_with(&self, obs: ObservationConfig) -> Result<GeneratorEnv> {
        Ok(GeneratorEnv::new(self.scene.spec(), self.generator, obs)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::parse(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn unknown_key_reports_its_path() {
        let err = RunConfig::parse("[train.ppo]\nlearning_rate = 0.1\n").unwrap_err();
        let msg = format!("{err:#}");
        assert!(msg.contains("train.ppo"), "{msg}");
        assert!(msg.contains("learning_rate"), "{msg}");
    }

    #[test]
    fn partial_file_keeps_other_defaults() {
        let cfg = RunConfig::parse("seed = 7\n[scene]\nobjects = 3\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.scene.objects, 3);
        assert_eq!(cfg.train, TrainConfig::default());
    }
}
