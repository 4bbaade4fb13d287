use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{
    kalman_predict, kalman_update, weighted_fuse, GaussianEstimate, LinearObservation,
    TransitionModel,
};
use crate::error::{Error, Result};
use crate::sensors::{Measurement, SensorKind};
use crate::sim::WorldState;

/// `[gap to lead obstacle, closing speed, ego lateral offset, ego speed]`.
pub const STATE_DIM: usize = 4;
const GAP: usize = 0;
const CLOSING: usize = 1;
const LATERAL: usize = 2;
const SPEED: usize = 3;

/// Fusion section of the run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    /// Process noise spectral density per state component (per second).
    pub process_noise: [f64; STATE_DIM],
    /// Ego localization noise variance for `[lateral offset, speed]`.
    pub localization_variance: [f64; 2],
    /// Gap reported while no sensor has a return.
    pub no_target_gap: f64,
    pub no_target_gap_variance: f64,
    pub initial_closing_variance: f64,
    /// Gap innovations larger than this re-acquire the track.
    pub reacquire_gate: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            process_noise: [0.5, 20.0, 0.05, 20.0],
            localization_variance: [0.01, 0.04],
            no_target_gap: 120.0,
            no_target_gap_variance: 1e4,
            initial_closing_variance: 25.0,
            reacquire_gate: 15.0,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self
            .process_noise
            .iter()
            .any(|q| !(q.is_finite() && *q >= 0.0))
        {
            return Err(Error::config(
                "fusion.process_noise",
                "entries must be >= 0",
            ));
        }
        if self
            .localization_variance
            .iter()
            .any(|v| !(v.is_finite() && *v > 0.0))
        {
            return Err(Error::config(
                "fusion.localization_variance",
                "entries must be > 0",
            ));
        }
        for (name, v) in [
            ("no_target_gap", self.no_target_gap),
            ("no_target_gap_variance", self.no_target_gap_variance),
            ("initial_closing_variance", self.initial_closing_variance),
            ("reacquire_gate", self.reacquire_gate),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(format!("fusion.{name}"), "must be > 0"));
            }
        }
        Ok(())
    }
}

/// Noisy ego localization `[lateral offset, speed]` drawn from the world's
/// generator.
pub fn sense_ego(world: &mut WorldState, variance: [f64; 2]) -> [f64; 2] {
    let y = world.ego.y;
    let v = world.ego.v;
    [
        world.rng.gaussian(y, variance[0]),
        world.rng.gaussian(v, variance[1]),
    ]
}

/// Tracks the fused driving state with a constant-closing-speed Kalman
/// filter. Sensors without a return are skipped for the tick; when no sensor
/// sees a target the track is dropped and the gap reverts to a far sentinel.
#[derive(Debug, Clone, PartialEq)]
pub struct DrivingStateEstimator {
    config: FusionConfig,
    estimate: GaussianEstimate,
    tracking: bool,
    last_ivw_gap: Option<(f64, f64)>,
}

impl DrivingStateEstimator {
    pub fn new(config: FusionConfig, initial_lateral: f64, initial_speed: f64) -> Self {
        let mut mean = DVector::zeros(STATE_DIM);
        mean[GAP] = config.no_target_gap;
        mean[LATERAL] = initial_lateral;
        mean[SPEED] = initial_speed;
        let cov = DMatrix::from_diagonal(&DVector::from_vec(vec![
            config.no_target_gap_variance,
            config.initial_closing_variance,
            config.localization_variance[0],
            config.localization_variance[1],
        ]));
        DrivingStateEstimator {
            config,
            estimate: GaussianEstimate {
                mean,
                covariance: cov,
            },
            tracking: false,
            last_ivw_gap: None,
        }
    }

    pub fn estimate(&self) -> &GaussianEstimate {
        &self.estimate
    }

    pub fn state(&self) -> [f64; STATE_DIM] {
        let m = &self.estimate.mean;
        [m[GAP], m[CLOSING], m[LATERAL], m[SPEED]]
    }

    pub fn is_tracking(&self) -> bool {
        self.tracking
    }

    /// Inverse-variance pooled gap from this tick's valid returns, without
    /// the filter prior.
    pub fn instantaneous_gap(&self) -> Option<(f64, f64)> {
        self.last_ivw_gap
    }

    fn transition(&self, dt: f64) -> TransitionModel {
        let mut f = DMatrix::identity(STATE_DIM, STATE_DIM);
        f[(GAP, CLOSING)] = -dt;
        let q = DMatrix::from_diagonal(&DVector::from_iterator(
            STATE_DIM,
            self.config.process_noise.iter().map(|q| q * dt),
        ));
        TransitionModel { f, q }
    }

    fn selector(rows: &[usize]) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(rows.len(), STATE_DIM);
        for (r, &c) in rows.iter().enumerate() {
            h[(r, c)] = 1.0;
        }
        h
    }

    fn drop_track(&mut self) {
        let cfg = &self.config;
        let p = &mut self.estimate.covariance;
        for i in 0..STATE_DIM {
            p[(GAP, i)] = 0.0;
            p[(i, GAP)] = 0.0;
            p[(CLOSING, i)] = 0.0;
            p[(i, CLOSING)] = 0.0;
        }
        p[(GAP, GAP)] = cfg.no_target_gap_variance;
        p[(CLOSING, CLOSING)] = cfg.initial_closing_variance;
        self.estimate.mean[GAP] = cfg.no_target_gap;
        self.estimate.mean[CLOSING] = 0.0;
        self.tracking = false;
    }

    fn acquire(&mut self, gap: (f64, f64), radar: Option<&Measurement>) {
        self.drop_track();
        let (closing, closing_var) = match radar {
            Some(m) => (m.values[1], m.variance[1]),
            // assume a stationary target until radar sees it
            None => (
                self.estimate.mean[SPEED],
                self.config.initial_closing_variance,
            ),
        };
        self.estimate.mean[GAP] = gap.0;
        self.estimate.mean[CLOSING] = closing;
        self.estimate.covariance[(GAP, GAP)] = gap.1;
        self.estimate.covariance[(CLOSING, CLOSING)] = closing_var;
        self.tracking = true;
    }

    /// One predict + update cycle.
    pub fn step(&mut self, measurements: &[Measurement], ego_fix: [f64; 2], dt: f64) -> Result<()> {
        self.estimate = kalman_predict(&self.estimate, &self.transition(dt))?;

        let loc = LinearObservation {
            h: Self::selector(&[LATERAL, SPEED]),
            r: DMatrix::from_diagonal(&DVector::from_vec(
                self.config.localization_variance.to_vec(),
            )),
        };
        self.estimate = kalman_update(&self.estimate, &DVector::from_vec(ego_fix.to_vec()), &loc)?;

        let valid: Vec<&Measurement> = measurements.iter().filter(|m| m.valid).collect();
        let gaps: Vec<(f64, f64)> = valid.iter().map(|m| (m.values[0], m.variance[0])).collect();
        self.last_ivw_gap = if gaps.iter().all(|g| g.1 > 0.0) && !gaps.is_empty() {
            Some(weighted_fuse(&gaps)?)
        } else {
            None
        };
        if valid.is_empty() {
            self.drop_track();
            return Ok(());
        }
        let radar = valid
            .iter()
            .copied()
            .find(|m| m.sensor == SensorKind::Radar);
        let pooled = self.last_ivw_gap.unwrap_or(gaps[0]);
        if !self.tracking || (pooled.0 - self.estimate.mean[GAP]).abs() > self.config.reacquire_gate
        {
            self.acquire(pooled, radar);
            return Ok(());
        }
        for m in valid {
            let rows: &[usize] = match m.sensor {
                SensorKind::Radar => &[GAP, CLOSING],
                SensorKind::Camera | SensorKind::Lidar => &[GAP],
            };
            let obs = LinearObservation {
                h: Self::selector(rows),
                r: DMatrix::from_diagonal(&DVector::from_vec(m.variance.clone())),
            };
            self.estimate =
                kalman_update(&self.estimate, &DVector::from_vec(m.values.clone()), &obs)?;
        }
        Ok(())
    }
}
