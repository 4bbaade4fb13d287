//! Weather-degraded synthetic range sensors.
//!
//! Each sensor observes the lead obstacle (nearest in-corridor obstacle
//! ahead). Camera and LiDAR report the gap; radar reports gap and closing
//! speed. Weather scales noise variance up and effective range down.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{lead_obstacle, WeatherCondition, WeatherKind, WorldState};

/// Value carried by every channel of an invalid measurement.
pub const NO_RETURN: f64 = f64::INFINITY;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SensorKind {
    Camera,
    Lidar,
    Radar,
}

impl SensorKind {
    pub const ALL: [SensorKind; 3] = [SensorKind::Camera, SensorKind::Lidar, SensorKind::Radar];

    pub fn name(self) -> &'static str {
        match self {
            SensorKind::Camera => "camera",
            SensorKind::Lidar => "lidar",
            SensorKind::Radar => "radar",
        }
    }
}

/// Per-weather scalar table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeatherTable {
    pub clear: f64,
    pub fog: f64,
    pub rain: f64,
    pub snow: f64,
}

impl WeatherTable {
    pub fn get(&self, kind: WeatherKind) -> f64 {
        match kind {
            WeatherKind::Clear => self.clear,
            WeatherKind::Fog => self.fog,
            WeatherKind::Rain => self.rain,
            WeatherKind::Snow => self.snow,
        }
    }

    fn values(&self) -> [(WeatherKind, f64); 4] {
        WeatherKind::ALL.map(|k| (k, self.get(k)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorSpec {
    pub kind: SensorKind,
    /// Clear-weather noise variance of each measured channel.
    pub base_variance: Vec<f64>,
    pub max_range: f64,
    pub weather_variance_multiplier: WeatherTable,
    /// Range multiplier at full intensity; interpolated linearly from 1 at
    /// intensity 0.
    pub weather_range_multiplier: WeatherTable,
    /// Variance slope in intensity.
    pub intensity_slope: f64,
}

impl SensorSpec {
    pub fn default_for(kind: SensorKind) -> SensorSpec {
        let (base_variance, max_range, var, range) = match kind {
            SensorKind::Camera => (vec![1.0], 80.0, [1.0, 4.0, 2.5, 3.0], [1.0, 0.35, 0.7, 0.5]),
            SensorKind::Lidar => (
                vec![0.09],
                100.0,
                [1.0, 2.0, 2.0, 2.5],
                [1.0, 0.6, 0.5, 0.5],
            ),
            SensorKind::Radar => (
                vec![0.25, 0.04],
                70.0,
                [1.0, 1.2, 1.1, 1.3],
                [1.0, 0.9, 0.85, 0.8],
            ),
        };
        let table = |t: [f64; 4]| WeatherTable {
            clear: t[0],
            fog: t[1],
            rain: t[2],
            snow: t[3],
        };
        SensorSpec {
            kind,
            base_variance,
            max_range,
            weather_variance_multiplier: table(var),
            weather_range_multiplier: table(range),
            intensity_slope: 0.5,
        }
    }

    /// Number of channels this sensor reports.
    pub fn channels(&self) -> usize {
        match self.kind {
            SensorKind::Camera | SensorKind::Lidar => 1,
            SensorKind::Radar => 2,
        }
    }

    pub fn validate(&self, prefix: &str) -> Result<()> {
        if self.base_variance.len() != self.channels() {
            return Err(Error::config(
                format!("{prefix}.base_variance"),
                format!(
                    "expected {} channel(s), got {}",
                    self.channels(),
                    self.base_variance.len()
                ),
            ));
        }
        if self
            .base_variance
            .iter()
            .any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return Err(Error::config(
                format!("{prefix}.base_variance"),
                "must be finite and >= 0",
            ));
        }
        if !(self.max_range.is_finite() && self.max_range > 0.0) {
            return Err(Error::config(format!("{prefix}.max_range"), "must be > 0"));
        }
        if self.weather_variance_multiplier.clear != 1.0 {
            return Err(Error::config(
                format!("{prefix}.weather_variance_multiplier.clear"),
                "must be exactly 1",
            ));
        }
        if self.weather_range_multiplier.clear != 1.0 {
            return Err(Error::config(
                format!("{prefix}.weather_range_multiplier.clear"),
                "must be exactly 1",
            ));
        }
        for (k, m) in self.weather_variance_multiplier.values() {
            if !(m.is_finite() && m >= 1.0) {
                return Err(Error::config(
                    format!("{prefix}.weather_variance_multiplier.{k}"),
                    format!("must be >= 1, got {m}"),
                ));
            }
        }
        for (k, m) in self.weather_range_multiplier.values() {
            if !(m > 0.0 && m <= 1.0) {
                return Err(Error::config(
                    format!("{prefix}.weather_range_multiplier.{k}"),
                    format!("must lie in (0, 1], got {m}"),
                ));
            }
        }
        if !(self.intensity_slope.is_finite() && self.intensity_slope >= 0.0) {
            return Err(Error::config(
                format!("{prefix}.intensity_slope"),
                "must be >= 0",
            ));
        }
        Ok(())
    }
}

/// The three-sensor rig.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorSuite {
    pub camera: SensorSpec,
    pub lidar: SensorSpec,
    pub radar: SensorSpec,
}

impl Default for SensorSuite {
    fn default() -> Self {
        SensorSuite {
            camera: SensorSpec::default_for(SensorKind::Camera),
            lidar: SensorSpec::default_for(SensorKind::Lidar),
            radar: SensorSpec::default_for(SensorKind::Radar),
        }
    }
}

impl SensorSuite {
    pub fn specs(&self) -> [&SensorSpec; 3] {
        [&self.camera, &self.lidar, &self.radar]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, spec, kind) in [
            ("sensors.camera", &self.camera, SensorKind::Camera),
            ("sensors.lidar", &self.lidar, SensorKind::Lidar),
            ("sensors.radar", &self.radar, SensorKind::Radar),
        ] {
            if spec.kind != kind {
                return Err(Error::config(
                    format!("{name}.kind"),
                    format!("must be {}", kind.name()),
                ));
            }
            spec.validate(name)?;
        }
        Ok(())
    }

    /// Farthest range at which any sensor still returns.
    pub fn horizon(&self, weather: &WeatherCondition) -> f64 {
        self.specs()
            .iter()
            .map(|s| degrade_range(s, weather))
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub sensor: SensorKind,
    pub tick: u32,
    pub values: Vec<f64>,
    pub variance: Vec<f64>,
    pub valid: bool,
}

/// `multiplier(kind) * (1 + slope * intensity)`.
pub fn variance_factor(spec: &SensorSpec, weather: &WeatherCondition) -> f64 {
    spec.weather_variance_multiplier.get(weather.kind())
        * (1.0 + spec.intensity_slope * weather.intensity())
}

/// Per-channel noise variance under the given weather.
pub fn noise_variance_for(spec: &SensorSpec, weather: &WeatherCondition) -> Vec<f64> {
    let f = variance_factor(spec, weather);
    spec.base_variance.iter().map(|b| b * f).collect()
}

pub fn degrade_range(spec: &SensorSpec, weather: &WeatherCondition) -> f64 {
    let full = spec.weather_range_multiplier.get(weather.kind());
    let m = 1.0 - weather.intensity() * (1.0 - full);
    spec.max_range * m
}

/// Observe the lead obstacle. Noise draws consume the world's generator;
/// an out-of-range or absent target yields an invalid measurement without
/// drawing.
pub fn sense(spec: &SensorSpec, world: &mut WorldState) -> Measurement {
    let variance = noise_variance_for(spec, &world.weather);
    let range = degrade_range(spec, &world.weather);
    let target = lead_obstacle(world).filter(|(gap, _)| *gap <= range);
    let (values, valid) = match target {
        Some((gap, closing)) => {
            let truth = [gap, closing];
            let values = (0..spec.channels())
                .map(|c| world.rng.gaussian(truth[c], variance[c]))
                .collect();
            (values, true)
        }
        None => (vec![NO_RETURN; spec.channels()], false),
    };
    Measurement {
        sensor: spec.kind,
        tick: world.tick,
        values,
        variance,
        valid,
    }
}
