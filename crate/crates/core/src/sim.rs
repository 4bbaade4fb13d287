//! Straight-road driving world: point-mass ego kinematics, longitudinally
//! moving obstacles, weather, collision and lane-departure detection.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::rng::SimRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeatherKind {
    Clear,
    Fog,
    Rain,
    Snow,
}

impl WeatherKind {
    pub const ALL: [WeatherKind; 4] = [
        WeatherKind::Clear,
        WeatherKind::Fog,
        WeatherKind::Rain,
        WeatherKind::Snow,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            WeatherKind::Clear => "clear",
            WeatherKind::Fog => "fog",
            WeatherKind::Rain => "rain",
            WeatherKind::Snow => "snow",
        }
    }

    pub fn one_hot(self) -> [f64; 4] {
        let mut v = [0.0; 4];
        v[self.index()] = 1.0;
        v
    }
}

impl fmt::Display for WeatherKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for WeatherKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "clear" => Ok(WeatherKind::Clear),
            "fog" => Ok(WeatherKind::Fog),
            "rain" => Ok(WeatherKind::Rain),
            "snow" => Ok(WeatherKind::Snow),
            other => Err(Error::Usage(format!(
                "unknown weather '{other}' (allowed: clear, fog, rain, snow)"
            ))),
        }
    }
}

/// Weather kind plus intensity in `[0, 1]`. Clear always has intensity 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeatherCondition {
    kind: WeatherKind,
    intensity: f64,
}

impl WeatherCondition {
    pub fn new(kind: WeatherKind, intensity: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&intensity) {
            return Err(Error::Domain(format!(
                "weather intensity {intensity} outside [0, 1]"
            )));
        }
        let intensity = if kind == WeatherKind::Clear {
            0.0
        } else {
            intensity
        };
        Ok(WeatherCondition { kind, intensity })
    }

    pub fn clear() -> Self {
        WeatherCondition {
            kind: WeatherKind::Clear,
            intensity: 0.0,
        }
    }

    /// Full-intensity condition of the given kind.
    pub fn heavy(kind: WeatherKind) -> Self {
        WeatherCondition::new(kind, 1.0).expect("1.0 is a valid intensity")
    }

    pub fn kind(&self) -> WeatherKind {
        self.kind
    }

    pub fn intensity(&self) -> f64 {
        self.intensity
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    SteerLeft,
    SteerRight,
    Maintain,
    Accelerate,
    Brake,
}

impl Action {
    /// Fixed action order; indices are stable across the crate.
    pub const ALL: [Action; 5] = [
        Action::SteerLeft,
        Action::SteerRight,
        Action::Maintain,
        Action::Accelerate,
        Action::Brake,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Action> {
        Action::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::Domain(format!("action index {i} out of range 0..5")))
    }

    pub fn is_steering(self) -> bool {
        matches!(self, Action::SteerLeft | Action::SteerRight)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub x: f64,
    /// Lateral offset from lane center, positive to the left.
    pub y: f64,
    pub v: f64,
    pub heading: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub id: u32,
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub half_extent: f64,
}

/// Ego footprint and actuation limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VehicleDynamics {
    pub v_max: f64,
    pub accel: f64,
    pub brake_decel: f64,
    pub lateral_rate: f64,
    pub half_length: f64,
    pub half_width: f64,
}

impl Default for VehicleDynamics {
    fn default() -> Self {
        VehicleDynamics {
            v_max: 30.0,
            accel: 2.5,
            brake_decel: 6.0,
            lateral_rate: 1.0,
            half_length: 2.25,
            half_width: 0.9,
        }
    }
}

impl VehicleDynamics {
    pub fn longitudinal_accel(&self, action: Action) -> f64 {
        match action {
            Action::Accelerate => self.accel,
            Action::Brake => -self.brake_decel,
            _ => 0.0,
        }
    }

    pub fn lateral_velocity(&self, action: Action) -> f64 {
        match action {
            Action::SteerLeft => self.lateral_rate,
            Action::SteerRight => -self.lateral_rate,
            _ => 0.0,
        }
    }
}

/// Scenario section of the run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeConfig {
    pub dt: f64,
    pub max_ticks: u32,
    pub lane_half_width: f64,
    pub num_obstacles: usize,
    /// Obstacles spawn this far ahead of the ego (m), uniformly.
    pub spawn_window: (f64, f64),
    pub obstacle_lateral_jitter: f64,
    pub obstacle_speed_range: (f64, f64),
    pub obstacle_half_extent: f64,
    pub ego_initial_speed: f64,
    pub dynamics: VehicleDynamics,
    pub weather: WeatherKind,
    /// Non-clear episodes draw their intensity uniformly from this range.
    pub intensity_range: (f64, f64),
    /// Obstacles this far behind the ego are respawned ahead of it within
    /// `respawn_window`; `None` keeps them where they are.
    pub recycle_behind: Option<f64>,
    pub respawn_window: (f64, f64),
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            dt: 0.1,
            max_ticks: 600,
            lane_half_width: 1.75,
            num_obstacles: 3,
            spawn_window: (60.0, 300.0),
            obstacle_lateral_jitter: 0.3,
            obstacle_speed_range: (4.0, 12.0),
            obstacle_half_extent: 1.0,
            ego_initial_speed: 20.0,
            dynamics: VehicleDynamics::default(),
            weather: WeatherKind::Clear,
            intensity_range: (0.5, 1.0),
            recycle_behind: Some(20.0),
            respawn_window: (30.0, 300.0),
        }
    }
}

impl EpisodeConfig {
    pub fn with_weather(mut self, kind: WeatherKind) -> Self {
        self.weather = kind;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::config(
                    format!("scenario.{name}"),
                    format!("must be > 0, got {v}"),
                ))
            }
        };
        pos("dt", self.dt)?;
        pos("lane_half_width", self.lane_half_width)?;
        pos("obstacle_half_extent", self.obstacle_half_extent)?;
        pos("dynamics.v_max", self.dynamics.v_max)?;
        pos("dynamics.half_length", self.dynamics.half_length)?;
        pos("dynamics.half_width", self.dynamics.half_width)?;
        if self.max_ticks == 0 {
            return Err(Error::config("scenario.max_ticks", "must be >= 1"));
        }
        let (lo, hi) = self.spawn_window;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::config(
                "scenario.spawn_window",
                "expected [min, max] with min <= max",
            ));
        }
        let (rlo, rhi) = self.respawn_window;
        if !(rlo.is_finite() && rhi.is_finite() && 0.0 <= rlo && rlo <= rhi) {
            return Err(Error::config(
                "scenario.respawn_window",
                "expected [min, max] with 0 <= min <= max",
            ));
        }
        let (slo, shi) = self.obstacle_speed_range;
        if !(slo >= 0.0 && slo <= shi && shi.is_finite()) {
            return Err(Error::config(
                "scenario.obstacle_speed_range",
                "expected 0 <= min <= max",
            ));
        }
        let (ilo, ihi) = self.intensity_range;
        if !(0.0 <= ilo && ilo <= ihi && ihi <= 1.0) {
            return Err(Error::config(
                "scenario.intensity_range",
                "expected 0 <= min <= max <= 1",
            ));
        }
        if !(self.ego_initial_speed >= 0.0 && self.ego_initial_speed <= self.dynamics.v_max) {
            return Err(Error::config(
                "scenario.ego_initial_speed",
                "must lie in [0, dynamics.v_max]",
            ));
        }
        if let Some(d) = self.recycle_behind {
            if !(d.is_finite() && d >= 0.0) {
                return Err(Error::config(
                    "scenario.recycle_behind",
                    "must be >= 0 or null",
                ));
            }
        }
        if !(self.obstacle_lateral_jitter >= 0.0) {
            return Err(Error::config(
                "scenario.obstacle_lateral_jitter",
                "must be >= 0",
            ));
        }
        for (name, v) in [
            ("dynamics.accel", self.dynamics.accel),
            ("dynamics.brake_decel", self.dynamics.brake_decel),
            ("dynamics.lateral_rate", self.dynamics.lateral_rate),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(format!("scenario.{name}"), "must be >= 0"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub tick: u32,
    pub time_s: f64,
    pub dt: f64,
    pub max_ticks: u32,
    pub ego: VehicleState,
    pub obstacles: Vec<Obstacle>,
    pub weather: WeatherCondition,
    pub lane_half_width: f64,
    pub dynamics: VehicleDynamics,
    pub traffic: Traffic,
    pub done: bool,
    pub rng: SimRng,
}

/// Obstacle spawn parameters carried by the world for recycling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Traffic {
    pub spawn_window: (f64, f64),
    pub lateral_jitter: f64,
    pub speed_range: (f64, f64),
    pub half_extent: f64,
    pub recycle_behind: Option<f64>,
    pub respawn_window: (f64, f64),
}

impl Traffic {
    fn from_config(config: &EpisodeConfig) -> Self {
        Traffic {
            spawn_window: config.spawn_window,
            lateral_jitter: config.obstacle_lateral_jitter,
            speed_range: config.obstacle_speed_range,
            half_extent: config.obstacle_half_extent,
            recycle_behind: config.recycle_behind,
            respawn_window: config.respawn_window,
        }
    }

    fn spawn(&self, id: u32, ego_x: f64, window: (f64, f64), rng: &mut SimRng) -> Obstacle {
        Obstacle {
            id,
            x: ego_x + rng.uniform_range(window.0, window.1),
            y: rng.uniform_range(-self.lateral_jitter, self.lateral_jitter),
            vx: rng.uniform_range(self.speed_range.0, self.speed_range.1),
            half_extent: self.half_extent,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub collided: bool,
    pub lane_departed: bool,
    pub progressed_m: f64,
    pub done: bool,
}

pub fn spawn_scenario(config: &EpisodeConfig, seed: u64) -> Result<WorldState> {
    config.validate()?;
    let mut rng = SimRng::new(seed);
    let intensity = if config.weather == WeatherKind::Clear {
        0.0
    } else {
        rng.uniform_range(config.intensity_range.0, config.intensity_range.1)
    };
    let weather = WeatherCondition::new(config.weather, intensity)?;
    let traffic = Traffic::from_config(config);
    let obstacles = (0..config.num_obstacles)
        .map(|i| traffic.spawn(i as u32, 0.0, traffic.spawn_window, &mut rng))
        .collect();
    Ok(WorldState {
        tick: 0,
        time_s: 0.0,
        dt: config.dt,
        max_ticks: config.max_ticks,
        ego: VehicleState {
            x: 0.0,
            y: 0.0,
            v: config.ego_initial_speed,
            heading: 0.0,
        },
        obstacles,
        weather,
        lane_half_width: config.lane_half_width,
        dynamics: config.dynamics,
        traffic,
        done: false,
        rng,
    })
}

/// Advance one tick. Speed is updated first and the new speed moves the
/// ego (semi-implicit Euler), so `progressed_m == v_new * dt`.
pub fn step_world(
    state: &WorldState,
    action: Action,
    dt: f64,
) -> Result<(WorldState, StepOutcome)> {
    if state.done {
        return Err(Error::Usage("cannot step a finished episode".into()));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Domain(format!("dt must be > 0, got {dt}")));
    }
    let dyn_ = &state.dynamics;
    let mut next = state.clone();

    let v = (state.ego.v + dyn_.longitudinal_accel(action) * dt).clamp(0.0, dyn_.v_max);
    let lat = dyn_.lateral_velocity(action);
    let progressed_m = v * dt;
    next.ego.v = v;
    next.ego.x = state.ego.x + progressed_m;
    next.ego.y = state.ego.y + lat * dt;
    next.ego.heading = lat.atan2(v);

    for ob in &mut next.obstacles {
        ob.x += ob.vx * dt;
    }
    if let Some(behind) = state.traffic.recycle_behind {
        let tail = next.ego.x - dyn_.half_length - behind;
        let mut next_id = next.obstacles.iter().map(|o| o.id + 1).max().unwrap_or(0);
        for i in 0..next.obstacles.len() {
            if next.obstacles[i].x + next.obstacles[i].half_extent < tail {
                next.obstacles[i] = state.traffic.spawn(
                    next_id,
                    next.ego.x,
                    state.traffic.respawn_window,
                    &mut next.rng,
                );
                next_id += 1;
            }
        }
    }
    next.tick = state.tick + 1;
    next.time_s = next.tick as f64 * state.dt;

    let collided = detect_collision_with(
        &next.ego,
        &next.obstacles,
        dyn_.half_length,
        dyn_.half_width,
    );
    let lane_departed = detect_lane_departure(&next.ego, next.lane_half_width);
    let done = collided || next.tick >= next.max_ticks;
    next.done = done;
    Ok((
        next,
        StepOutcome {
            collided,
            lane_departed,
            progressed_m,
            done,
        },
    ))
}

/// Collision test with the default ego footprint.
pub fn detect_collision(ego: &VehicleState, obstacles: &[Obstacle]) -> bool {
    let d = VehicleDynamics::default();
    detect_collision_with(ego, obstacles, d.half_length, d.half_width)
}

pub fn detect_collision_with(
    ego: &VehicleState,
    obstacles: &[Obstacle],
    ego_half_len: f64,
    ego_half_wid: f64,
) -> bool {
    obstacles.iter().any(|ob| {
        (ob.x - ego.x).abs() <= ob.half_extent + ego_half_len
            && (ob.y - ego.y).abs() <= ob.half_extent + ego_half_wid
    })
}

/// Strictly outside the lane; the boundary itself counts as in-lane.
pub fn detect_lane_departure(ego: &VehicleState, lane_half_width: f64) -> bool {
    ego.y.abs() > lane_half_width
}

/// Nearest obstacle ahead whose footprint overlaps the ego's lateral corridor.
/// Returns the bumper-to-bumper gap and the closing speed.
pub fn lead_obstacle(world: &WorldState) -> Option<(f64, f64)> {
    let ego = &world.ego;
    let d = &world.dynamics;
    world
        .obstacles
        .iter()
        .filter(|ob| ob.x > ego.x && (ob.y - ego.y).abs() <= ob.half_extent + d.half_width)
        .map(|ob| {
            let gap = (ob.x - ob.half_extent) - (ego.x + d.half_length);
            (gap.max(0.0), ego.v - ob.vx)
        })
        .min_by(|a, b| a.0.total_cmp(&b.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn empty_world() -> WorldState {
        let cfg = EpisodeConfig {
            num_obstacles: 0,
            ..EpisodeConfig::default()
        };
        spawn_scenario(&cfg, 1).unwrap()
    }

    #[test]
    fn spawn_is_deterministic() {
        let cfg = EpisodeConfig::default();
        assert_eq!(
            spawn_scenario(&cfg, 7).unwrap(),
            spawn_scenario(&cfg, 7).unwrap()
        );
    }

    #[test]
    fn spawn_zero_obstacles() {
        assert!(empty_world().obstacles.is_empty());
    }

    #[test]
    fn spawn_five_within_window() {
        let cfg = EpisodeConfig {
            num_obstacles: 5,
            ..EpisodeConfig::default()
        };
        let w = spawn_scenario(&cfg, 1).unwrap();
        assert_eq!(w.obstacles.len(), 5);
        for ob in &w.obstacles {
            assert!(ob.x >= cfg.spawn_window.0 && ob.x <= cfg.spawn_window.1);
            assert!(ob.y.abs() <= cfg.obstacle_lateral_jitter);
            assert!(ob.vx >= cfg.obstacle_speed_range.0 && ob.vx <= cfg.obstacle_speed_range.1);
        }
    }

    #[test]
    fn invalid_config_names_field() {
        let cfg = EpisodeConfig {
            dt: 0.0,
            ..EpisodeConfig::default()
        };
        match spawn_scenario(&cfg, 0) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "scenario.dt"),
            other => panic!("unexpected {other:?}"),
        }
        let cfg = EpisodeConfig {
            lane_half_width: -1.0,
            ..EpisodeConfig::default()
        };
        match spawn_scenario(&cfg, 0) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "scenario.lane_half_width"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn clear_forces_zero_intensity() {
        let w = WeatherCondition::new(WeatherKind::Clear, 0.8).unwrap();
        assert_eq!(w.intensity(), 0.0);
        assert!(WeatherCondition::new(WeatherKind::Fog, 1.5).is_err());
    }

    #[test]
    fn maintain_on_empty_road() {
        let w = empty_world();
        let (n, out) = step_world(&w, Action::Maintain, w.dt).unwrap();
        assert!(!out.collided && !out.lane_departed);
        assert_eq!(n.ego.y, w.ego.y);
        assert_eq!(n.ego.v, w.ego.v);
        assert_eq!(out.progressed_m, n.ego.v * w.dt);
        assert_eq!(n.time_s, 1.0 * w.dt);
    }

    #[test]
    fn overlap_collides_and_finishes() {
        let mut w = empty_world();
        w.obstacles.push(Obstacle {
            id: 0,
            x: w.ego.x + w.ego.v * w.dt,
            y: 0.0,
            vx: 0.0,
            half_extent: 1.0,
        });
        let (n, out) = step_world(&w, Action::Maintain, w.dt).unwrap();
        assert!(out.collided && out.done && n.done);
        assert!(matches!(
            step_world(&n, Action::Maintain, w.dt),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn steer_past_boundary_departs() {
        let mut w = empty_world();
        let eps = 0.05;
        w.ego.y = -(w.lane_half_width - eps);
        // lateral_rate * dt = 0.1 > eps
        let (_, out) = step_world(&w, Action::SteerRight, w.dt).unwrap();
        assert!(out.lane_departed);
    }

    #[test]
    fn collision_examples() {
        let ego = VehicleState {
            x: 0.0,
            y: 0.0,
            v: 0.0,
            heading: 0.0,
        };
        let ob = |x: f64| Obstacle {
            id: 0,
            x,
            y: 0.0,
            vx: 0.0,
            half_extent: 1.0,
        };
        assert!(!detect_collision(&ego, &[ob(100.0)]));
        assert!(detect_collision(&ego, &[ob(0.0)]));
        // combined longitudinal extent 2.0
        assert!(detect_collision_with(&ego, &[ob(1.9)], 1.0, 0.9));
        assert!(!detect_collision_with(&ego, &[ob(2.1)], 1.0, 0.9));
    }

    #[test]
    fn lane_departure_examples() {
        let at = |y: f64| VehicleState {
            x: 0.0,
            y,
            v: 0.0,
            heading: 0.0,
        };
        assert!(!detect_lane_departure(&at(0.0), 1.75));
        assert!(!detect_lane_departure(&at(1.75), 1.75));
        assert!(!detect_lane_departure(&at(-1.75), 1.75));
        assert!(detect_lane_departure(&at(1.9), 1.75));
    }

    #[test]
    fn speed_is_clamped() {
        let mut w = empty_world();
        w.ego.v = 0.1;
        let (n, _) = step_world(&w, Action::Brake, w.dt).unwrap();
        assert_eq!(n.ego.v, 0.0);
        w.ego.v = w.dynamics.v_max;
        let (n, _) = step_world(&w, Action::Accelerate, w.dt).unwrap();
        assert_eq!(n.ego.v, w.dynamics.v_max);
    }

    #[test]
    fn episode_caps_at_max_ticks() {
        let cfg = EpisodeConfig {
            num_obstacles: 0,
            max_ticks: 3,
            ..EpisodeConfig::default()
        };
        let mut w = spawn_scenario(&cfg, 0).unwrap();
        let mut n = 0;
        while !w.done {
            w = step_world(&w, Action::Maintain, w.dt).unwrap().0;
            n += 1;
        }
        assert_eq!(n, 3);
    }

    #[test]
    fn passed_obstacles_respawn_ahead() {
        let mut w = spawn_scenario(&EpisodeConfig::default(), 4).unwrap();
        w.obstacles[0].x = w.ego.x - 40.0;
        w.obstacles[0].y = 5.0;
        let (n, _) = step_world(&w, Action::Maintain, 0.1).unwrap();
        let ob = n.obstacles[0];
        assert!(ob.x >= n.ego.x + 30.0 && ob.x <= n.ego.x + 300.0);
        assert_eq!(ob.id, 3);

        let cfg = EpisodeConfig {
            recycle_behind: None,
            ..EpisodeConfig::default()
        };
        let mut w = spawn_scenario(&cfg, 4).unwrap();
        w.obstacles[0].x = w.ego.x - 40.0;
        let (n, _) = step_world(&w, Action::Maintain, 0.1).unwrap();
        assert!(n.obstacles[0].x < n.ego.x);
    }

    #[test]
    fn lead_obstacle_gap() {
        let mut w = empty_world();
        w.obstacles.push(Obstacle {
            id: 0,
            x: 50.0,
            y: 0.2,
            vx: 5.0,
            half_extent: 1.0,
        });
        w.obstacles.push(Obstacle {
            id: 1,
            x: 20.0,
            y: 3.0,
            vx: 0.0,
            half_extent: 1.0,
        });
        let (gap, closing) = lead_obstacle(&w).unwrap();
        assert!((gap - (50.0 - 1.0 - 2.25)).abs() < 1e-12);
        assert!((closing - (w.ego.v - 5.0)).abs() < 1e-12);
    }
}
