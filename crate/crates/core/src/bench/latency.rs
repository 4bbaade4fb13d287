use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SimRng;
use crate::sensors::WeatherTable;
use crate::sim::WeatherKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeploymentMode {
    Edge,
    Cloud,
}

impl DeploymentMode {
    pub const ALL: [DeploymentMode; 2] = [DeploymentMode::Edge, DeploymentMode::Cloud];

    pub fn name(self) -> &'static str {
        match self {
            DeploymentMode::Edge => "edge",
            DeploymentMode::Cloud => "cloud",
        }
    }
}

impl fmt::Display for DeploymentMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DeploymentMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "edge" => Ok(DeploymentMode::Edge),
            "cloud" => Ok(DeploymentMode::Cloud),
            _ => Err(Error::Usage(format!(
                "unknown mode '{s}' (allowed: edge, cloud)"
            ))),
        }
    }
}

/// A latency term: `mean * (1 + jitter * U(-1, 1))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Jittered {
    pub mean: f64,
    pub jitter: f64,
}

impl Jittered {
    pub fn fixed(mean: f64) -> Self {
        Jittered { mean, jitter: 0.0 }
    }

    fn draw(&self, rng: &mut SimRng) -> f64 {
        if self.jitter == 0.0 || self.mean == 0.0 {
            return self.mean;
        }
        self.mean * (1.0 + self.jitter * rng.uniform_range(-1.0, 1.0))
    }

    fn validate(&self, field: &str) -> Result<()> {
        if !(self.mean.is_finite() && self.mean >= 0.0) {
            return Err(Error::config(format!("{field}.mean"), "must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.jitter) {
            return Err(Error::config(
                format!("{field}.jitter"),
                "must lie in [0, 1]",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencyModel {
    pub compute_ms: Jittered,
    pub rtt_ms: Jittered,
    pub weather_penalty_ms: WeatherTable,
    pub penalty_jitter: f64,
}

impl LatencyModel {
    pub fn edge() -> Self {
        LatencyModel {
            compute_ms: Jittered {
                mean: 45.0,
                jitter: 0.1,
            },
            rtt_ms: Jittered::fixed(0.0),
            weather_penalty_ms: WeatherTable {
                clear: 0.0,
                fog: 5.0,
                rain: 7.0,
                snow: 10.0,
            },
            penalty_jitter: 0.1,
        }
    }

    pub fn cloud() -> Self {
        LatencyModel {
            compute_ms: Jittered {
                mean: 40.0,
                jitter: 0.1,
            },
            rtt_ms: Jittered {
                mean: 200.0,
                jitter: 0.1,
            },
            weather_penalty_ms: WeatherTable {
                clear: 0.0,
                fog: 30.0,
                rain: 50.0,
                snow: 70.0,
            },
            penalty_jitter: 0.1,
        }
    }

    /// No latency at all.
    pub fn zero() -> Self {
        LatencyModel {
            compute_ms: Jittered::fixed(0.0),
            rtt_ms: Jittered::fixed(0.0),
            weather_penalty_ms: WeatherTable {
                clear: 0.0,
                fog: 0.0,
                rain: 0.0,
                snow: 0.0,
            },
            penalty_jitter: 0.0,
        }
    }

    /// Same model with every jitter set to zero.
    pub fn without_jitter(&self) -> Self {
        LatencyModel {
            compute_ms: Jittered::fixed(self.compute_ms.mean),
            rtt_ms: Jittered::fixed(self.rtt_ms.mean),
            weather_penalty_ms: self.weather_penalty_ms,
            penalty_jitter: 0.0,
        }
    }

    pub fn mean_ms(&self, weather: WeatherKind) -> f64 {
        self.compute_ms.mean + self.rtt_ms.mean + self.weather_penalty_ms.get(weather)
    }

    pub fn validate(&self, field: &str) -> Result<()> {
        self.compute_ms.validate(&format!("{field}.compute_ms"))?;
        self.rtt_ms.validate(&format!("{field}.rtt_ms"))?;
        for k in WeatherKind::ALL {
            let p = self.weather_penalty_ms.get(k);
            if !(p.is_finite() && p >= 0.0) {
                return Err(Error::config(
                    format!("{field}.weather_penalty_ms.{k}"),
                    "must be >= 0",
                ));
            }
        }
        if !(0.0..=1.0).contains(&self.penalty_jitter) {
            return Err(Error::config(
                format!("{field}.penalty_jitter"),
                "must lie in [0, 1]",
            ));
        }
        Ok(())
    }
}

/// Deployment section of the run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeploymentConfig {
    pub edge: LatencyModel,
    pub cloud: LatencyModel,
    /// Run the int8 perception model on the edge.
    pub edge_quantized: bool,
}

impl Default for DeploymentConfig {
    fn default() -> Self {
        DeploymentConfig {
            edge: LatencyModel::edge(),
            cloud: LatencyModel::cloud(),
            edge_quantized: true,
        }
    }
}

impl DeploymentConfig {
    pub fn latency(&self, mode: DeploymentMode) -> &LatencyModel {
        match mode {
            DeploymentMode::Edge => &self.edge,
            DeploymentMode::Cloud => &self.cloud,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.edge.validate("deployment.edge")?;
        self.cloud.validate("deployment.cloud")?;
        if self.edge.rtt_ms.mean != 0.0 {
            return Err(Error::config(
                "deployment.edge.rtt_ms.mean",
                "edge inference has no network round trip; must be 0",
            ));
        }
        Ok(())
    }
}

/// Compute + network + weather penalty, each with its own jitter, clamped
/// at zero.
pub fn sample_latency(model: &LatencyModel, weather: WeatherKind, rng: &mut SimRng) -> f64 {
    let compute = model.compute_ms.draw(rng);
    let rtt = model.rtt_ms.draw(rng);
    let penalty = Jittered {
        mean: model.weather_penalty_ms.get(weather),
        jitter: model.penalty_jitter,
    }
    .draw(rng);
    (compute + rtt + penalty).max(0.0)
}

/// Ticks until an action decided now takes effect.
pub fn action_delay_ticks(latency_ms: f64, dt: f64) -> u32 {
    let ticks = latency_ms / (dt * 1000.0);
    let nearest = ticks.round();
    if (ticks - nearest).abs() < 1e-9 {
        nearest.max(0.0) as u32
    } else {
        ticks.ceil().max(0.0) as u32
    }
}
