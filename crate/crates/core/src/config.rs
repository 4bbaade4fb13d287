//! Run configuration: one JSON document per experiment.
//!
//! Every section and field is optional; missing values take the embedded
//! defaults (see [`RunConfig::default_json`]). Unknown fields are rejected
//! with their dotted path.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bench::{DeploymentConfig, DeploymentMode, PipelineConfig};
use crate::error::{Error, Result};
use crate::fusion::FusionConfig;
use crate::perception::PerceptionConfig;
use crate::rl::{AgentConfig, EnvConfig};
use crate::sensors::SensorSuite;
use crate::sim::{EpisodeConfig, WeatherKind};

/// Environment variable naming the default configuration file.
pub const CONFIG_ENV: &str = "EDGEDRIVE_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub episodes: usize,
    /// Weathers cycled episode by episode.
    pub weathers: Vec<WeatherKind>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            episodes: 2000,
            weathers: WeatherKind::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub episodes: u64,
    pub modes: Vec<DeploymentMode>,
    pub weathers: Vec<WeatherKind>,
    /// Worker threads; 0 uses one per core.
    pub threads: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            episodes: 200,
            modes: DeploymentMode::ALL.to_vec(),
            weathers: WeatherKind::ALL.to_vec(),
            threads: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Direct-control episodes per weather for the policy comparison.
    pub policy_episodes: u64,
    /// Episodes per weather for the fusion error study.
    pub fusion_episodes: u64,
    /// Held-out grids for the perception accuracy study.
    pub heldout_grids: usize,
    pub prune_fraction: f64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            policy_episodes: 200,
            fusion_episodes: 500,
            heldout_grids: 400,
            prune_fraction: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub scenario: EpisodeConfig,
    pub sensors: SensorSuite,
    pub fusion: FusionConfig,
    pub perception: PerceptionConfig,
    pub agent: AgentConfig,
    pub deployment: DeploymentConfig,
    pub training: TrainingConfig,
    pub benchmark: BenchmarkConfig,
    pub evaluation: EvaluationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            out_dir: PathBuf::from("runs/default"),
            scenario: EpisodeConfig::default(),
            sensors: SensorSuite::default(),
            fusion: FusionConfig::default(),
            perception: PerceptionConfig::default(),
            agent: AgentConfig::default(),
            deployment: DeploymentConfig::default(),
            training: TrainingConfig::default(),
            benchmark: BenchmarkConfig::default(),
            evaluation: EvaluationConfig::default(),
        }
    }
}

fn non_empty<T>(items: &[T], field: &str) -> Result<()> {
    if items.is_empty() {
        return Err(Error::config(field, "must list at least one value"));
    }
    Ok(())
}

impl RunConfig {
    /// Parse and validate a JSON document. Errors carry the dotted path of
    /// the offending field.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let field = if path == "." {
                "config".to_string()
            } else {
                path
            };
            Error::config(field, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read a configuration file. An unreadable file is a configuration
    /// error, not an I/O one.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("config", format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn default_json() -> String {
        serde_json::to_string_pretty(&RunConfig::default()).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.env().validate()?;
        self.perception.validate()?;
        self.agent.validate()?;
        self.deployment.validate()?;
        non_empty(&self.training.weathers, "training.weathers")?;
        non_empty(&self.benchmark.modes, "benchmark.modes")?;
        non_empty(&self.benchmark.weathers, "benchmark.weathers")?;
        if self.benchmark.episodes == 0 {
            return Err(Error::config("benchmark.episodes", "must be >= 1"));
        }
        let ev = &self.evaluation;
        for (name, v) in [
            ("policy_episodes", ev.policy_episodes as usize),
            ("fusion_episodes", ev.fusion_episodes as usize),
            ("heldout_grids", ev.heldout_grids),
        ] {
            if v == 0 {
                return Err(Error::config(format!("evaluation.{name}"), "must be >= 1"));
            }
        }
        if !(0.0..1.0).contains(&ev.prune_fraction) {
            return Err(Error::config(
                "evaluation.prune_fraction",
                "must lie in [0, 1)",
            ));
        }
        if self.out_dir.as_os_str().is_empty() {
            return Err(Error::config("out_dir", "must not be empty"));
        }
        Ok(())
    }

    pub fn env(&self) -> EnvConfig {
        EnvConfig {
            scenario: self.scenario.clone(),
            sensors: self.sensors.clone(),
            fusion: self.fusion.clone(),
        }
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            env: self.env(),
            reward: self.agent.reward,
            perception: self.perception.clone(),
            deployment: self.deployment.clone(),
            discount: self.agent.gamma,
            discount_convention: self.agent.discount_convention,
        }
    }
}
