use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{sense_ego, DrivingStateEstimator, FusionConfig, STATE_DIM};
use crate::sensors::{sense, Measurement, SensorSuite};
use crate::sim::{
    spawn_scenario, step_world, Action, EpisodeConfig, StepOutcome, WeatherKind, WorldState,
};

/// Fused driving state plus a weather one-hot.
pub const STATE_FEATURES: usize = STATE_DIM + 4;

const GAP_SCALE: f64 = 100.0;
const CLOSING_SCALE: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardWeights {
    pub alive_in_lane: f64,
    pub lane_departed: f64,
    pub collision: f64,
    pub steering: f64,
    /// Per meter travelled.
    pub progress: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            alive_in_lane: 1.0,
            lane_departed: -0.5,
            collision: -100.0,
            steering: -0.05,
            progress: 0.3,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alive_in_lane", self.alive_in_lane),
            ("lane_departed", self.lane_departed),
            ("collision", self.collision),
            ("steering", self.steering),
            ("progress", self.progress),
        ] {
            if !v.is_finite() {
                return Err(Error::config(
                    format!("agent.reward.{name}"),
                    "must be finite",
                ));
            }
        }
        Ok(())
    }
}

pub fn reward_for(outcome: &StepOutcome, action: Action, w: &RewardWeights) -> f64 {
    let mut r = if outcome.collided {
        w.collision
    } else if outcome.lane_departed {
        w.lane_departed
    } else {
        w.alive_in_lane
    };
    if action.is_steering() {
        r += w.steering;
    }
    r + w.progress * outcome.progressed_m
}

/// Scaled network input for a fused state.
pub fn encode_state(
    fused: &[f64; STATE_DIM],
    weather: WeatherKind,
    lane_half_width: f64,
    v_max: f64,
) -> Vec<f64> {
    let mut x = Vec::with_capacity(STATE_FEATURES);
    x.push(fused[0] / GAP_SCALE);
    x.push(fused[1] / CLOSING_SCALE);
    x.push(fused[2] / lane_half_width);
    x.push(fused[3] / v_max);
    x.extend(weather.one_hot());
    x
}

/// What a policy gets to see each tick.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub fused: [f64; STATE_DIM],
    pub weather: WeatherKind,
    pub features: Vec<f64>,
}

/// Everything the closed loop needs besides the policy.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub scenario: EpisodeConfig,
    pub sensors: SensorSuite,
    pub fusion: FusionConfig,
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.sensors.validate()?;
        self.fusion.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvStep {
    pub reward: f64,
    pub outcome: StepOutcome,
}

/// World, sensors and estimator stepped together: act, advance, sense, fuse.
#[derive(Debug, Clone)]
pub struct DrivingEnv {
    world: WorldState,
    estimator: DrivingStateEstimator,
    sensors: SensorSuite,
    localization_variance: [f64; 2],
    reward: RewardWeights,
    measurements: Vec<Measurement>,
}

impl DrivingEnv {
    pub fn reset(
        cfg: &EnvConfig,
        weather: WeatherKind,
        reward: RewardWeights,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        let scenario = cfg.scenario.clone().with_weather(weather);
        let world = spawn_scenario(&scenario, seed)?;
        let estimator = DrivingStateEstimator::new(cfg.fusion.clone(), world.ego.y, world.ego.v);
        let mut env = DrivingEnv {
            world,
            estimator,
            sensors: cfg.sensors.clone(),
            localization_variance: cfg.fusion.localization_variance,
            reward,
            measurements: Vec::with_capacity(3),
        };
        env.sense_and_fuse()?;
        Ok(env)
    }

    fn sense_and_fuse(&mut self) -> Result<()> {
        self.measurements.clear();
        for spec in self.sensors.specs() {
            self.measurements.push(sense(spec, &mut self.world));
        }
        let fix = sense_ego(&mut self.world, self.localization_variance);
        let dt = self.world.dt;
        self.estimator.step(&self.measurements, fix, dt)
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    pub fn estimator(&self) -> &DrivingStateEstimator {
        &self.estimator
    }

    /// This tick's raw sensor measurements.
    pub fn measurements(&self) -> &[Measurement] {
        &self.measurements
    }

    pub fn done(&self) -> bool {
        self.world.done
    }

    pub fn observation(&self) -> Observation {
        let fused = self.estimator.state();
        let weather = self.world.weather.kind();
        Observation {
            fused,
            weather,
            features: encode_state(
                &fused,
                weather,
                self.world.lane_half_width,
                self.world.dynamics.v_max,
            ),
        }
    }

    pub fn step(&mut self, action: Action) -> Result<EnvStep> {
        let (next, outcome) = step_world(&self.world, action, self.world.dt)?;
        self.world = next;
        if !outcome.done {
            self.sense_and_fuse()?;
        }
        Ok(EnvStep {
            reward: reward_for(&outcome, action, &self.reward),
            outcome,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reward_terms() {
        let w = RewardWeights::default();
        let o = StepOutcome {
            collided: false,
            lane_departed: false,
            progressed_m: 2.0,
            done: false,
        };
        assert!((reward_for(&o, Action::Maintain, &w) - 1.6).abs() < 1e-12);
        assert!((reward_for(&o, Action::SteerLeft, &w) - 1.55).abs() < 1e-12);
        let dep = StepOutcome {
            lane_departed: true,
            ..o
        };
        assert!((reward_for(&dep, Action::Maintain, &w) - 0.1).abs() < 1e-12);
        let hit = StepOutcome {
            collided: true,
            done: true,
            ..o
        };
        assert!((reward_for(&hit, Action::Brake, &w) + 99.4).abs() < 1e-12);
    }

    #[test]
    fn encoding_layout() {
        let x = encode_state(&[50.0, 10.0, 0.875, 15.0], WeatherKind::Rain, 1.75, 30.0);
        assert_eq!(x, vec![0.5, 0.5, 0.5, 0.5, 0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn env_is_deterministic() {
        let cfg = EnvConfig::default();
        let run = || {
            let mut env =
                DrivingEnv::reset(&cfg, WeatherKind::Fog, RewardWeights::default(), 9).unwrap();
            let mut trace = Vec::new();
            while !env.done() {
                let s = env.step(Action::Brake).unwrap();
                trace.push((env.observation().features, s.reward));
            }
            trace
        };
        let a = run();
        assert_eq!(a, run());
        assert!(!a.is_empty());
    }
}
