use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::latency::{action_delay_ticks, sample_latency, DeploymentConfig, DeploymentMode};
use super::report::EpisodeMetrics;
use crate::error::{Error, Result};
use crate::nn::{Mlp, QuantizedMlp};
use crate::perception::{perceive_frame, CellScorer, DetectionCounts, PerceptionConfig};
use crate::rl::{
    cumulative_reward, DiscountConvention, DrivingEnv, EnvConfig, Policy, RewardWeights,
};
use crate::rng::{derive_seed, stream, SimRng};
use crate::sim::{lead_obstacle, Action, VehicleState, WeatherKind};

/// Everything the closed loop needs besides the models.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub env: EnvConfig,
    pub reward: RewardWeights,
    pub perception: PerceptionConfig,
    pub deployment: DeploymentConfig,
    pub discount: f64,
    pub discount_convention: DiscountConvention,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.reward.validate()?;
        self.perception.validate()?;
        self.deployment.validate()?;
        if !(0.0..=1.0).contains(&self.discount) {
            return Err(Error::config("agent.gamma", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Full-precision and int8 variants of the cell classifier.
#[derive(Debug, Clone)]
pub struct PerceptionModels {
    pub full: Mlp,
    pub int8: QuantizedMlp,
}

impl PerceptionModels {
    pub fn new(full: Mlp) -> Self {
        let int8 = QuantizedMlp::from_mlp(&full);
        PerceptionModels { full, int8 }
    }

    pub fn for_mode(&self, mode: DeploymentMode, edge_quantized: bool) -> &dyn CellScorer {
        match mode {
            DeploymentMode::Edge if edge_quantized => &self.int8,
            _ => &self.full,
        }
    }
}

/// Seed of episode `index` in `weather`; shared by every deployment mode.
pub fn episode_seed(master: u64, weather: WeatherKind, index: u64) -> u64 {
    derive_seed(
        derive_seed(master, stream::EPISODE),
        ((weather.index() as u64) << 32) | index,
    )
}

/// Per-tick ego states and applied actions, for trajectory comparison.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub ego: Vec<VehicleState>,
    pub actions: Vec<Action>,
}

/// Sense, fuse, perceive and decide every tick; decisions take effect after
/// the sampled latency, rounded up to whole ticks, and the previous action
/// holds until then. Decisions land in the order they were made.
pub fn run_pipeline_episode(
    mode: DeploymentMode,
    cfg: &PipelineConfig,
    perception: Option<&PerceptionModels>,
    policy: &dyn Policy,
    weather: WeatherKind,
    seed: u64,
) -> Result<(EpisodeMetrics, Trajectory)> {
    let latency_model = cfg.deployment.latency(mode);
    let scorer = perception.map(|p| p.for_mode(mode, cfg.deployment.edge_quantized));
    let mut env = DrivingEnv::reset(
        &cfg.env,
        weather,
        cfg.reward,
        derive_seed(seed, stream::WORLD),
    )?;
    let mut policy_rng = SimRng::derived(seed, stream::POLICY);
    let mut latency_rng = SimRng::derived(seed, stream::LATENCY);
    let mut perception_rng = SimRng::derived(seed, stream::PERCEPTION);
    let dt = env.world().dt;

    let mut queue: VecDeque<(u32, Action)> = VecDeque::new();
    let mut applied = Action::Maintain;
    let mut last_effect = 0u32;
    let mut traj = Trajectory {
        ego: vec![env.world().ego],
        actions: Vec::new(),
    };
    let mut counts = DetectionCounts::default();
    let (mut iou_sum, mut matched) = (0.0, 0u64);
    let (mut latency_sum, mut delay_sum) = (0.0, 0u64);
    let mut rewards = Vec::new();
    let (mut collided, mut departures) = (false, 0u64);

    while !env.done() {
        let tick = env.world().tick;
        if let Some(model) = scorer {
            let frame = perceive_frame(
                model,
                &cfg.perception,
                &cfg.env.sensors,
                env.world(),
                &mut perception_rng,
            )?;
            counts.add(&frame.counts);
            iou_sum += frame.iou_sum;
            matched += frame.matched;
        }
        let decided = policy.act(&env.observation(), &mut policy_rng)?;
        let latency = sample_latency(latency_model, weather, &mut latency_rng);
        let delay = action_delay_ticks(latency, dt);
        latency_sum += latency;
        delay_sum += delay as u64;
        let effect = (tick + delay).max(last_effect);
        last_effect = effect;
        queue.push_back((effect, decided));
        while let Some(&(due, a)) = queue.front() {
            if due > tick {
                break;
            }
            applied = a;
            queue.pop_front();
        }

        let step = env.step(applied)?;
        traj.ego.push(env.world().ego);
        traj.actions.push(applied);
        rewards.push(step.reward);
        collided |= step.outcome.collided;
        departures += step.outcome.lane_departed as u64;
    }

    let ticks = rewards.len() as u64;
    let metrics = EpisodeMetrics {
        mode,
        weather,
        seed,
        collided,
        lane_departure_ticks: departures,
        total_ticks: ticks,
        mean_latency_ms: latency_sum / ticks.max(1) as f64,
        mean_delay_ticks: delay_sum as f64 / ticks.max(1) as f64,
        tp: counts.tp,
        tn: counts.tn,
        fp: counts.fp,
        fn_: counts.fn_,
        matched,
        mean_iou: (matched > 0).then(|| iou_sum / matched as f64),
        cumulative_reward: cumulative_reward(&rewards, cfg.discount, cfg.discount_convention)?,
    };
    Ok((metrics, traj))
}

/// One benchmark job per (mode, weather, episode index), run on a local
/// thread pool. Results come back in job order whatever the thread count.
#[allow(clippy::too_many_arguments)]
pub fn run_benchmark(
    cfg: &PipelineConfig,
    perception: Option<&PerceptionModels>,
    policy: &dyn Policy,
    modes: &[DeploymentMode],
    weathers: &[WeatherKind],
    episodes: u64,
    master_seed: u64,
    threads: usize,
) -> Result<Vec<EpisodeMetrics>> {
    cfg.validate()?;
    let jobs: Vec<(DeploymentMode, WeatherKind, u64)> = modes
        .iter()
        .flat_map(|m| {
            weathers
                .iter()
                .flat_map(move |w| (0..episodes).map(move |i| (*m, *w, i)))
        })
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Usage(format!("thread pool: {e}")))?;
    pool.install(|| {
        jobs.par_iter()
            .map(|&(mode, weather, i)| {
                run_pipeline_episode(
                    mode,
                    cfg,
                    perception,
                    policy,
                    weather,
                    episode_seed(master_seed, weather, i),
                )
                .map(|(m, _)| m)
            })
            .collect()
    })
}

/// Squared gap errors of the fused estimate and of each raw sensor, over
/// ticks where all three sensors return and the filter holds a track.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FusionErrors {
    pub fused: f64,
    pub camera: f64,
    pub lidar: f64,
    pub radar: f64,
    pub ticks: u64,
}

impl FusionErrors {
    pub fn add(&mut self, o: &FusionErrors) {
        self.fused += o.fused;
        self.camera += o.camera;
        self.lidar += o.lidar;
        self.radar += o.radar;
        self.ticks += o.ticks;
    }

    /// `[fused, camera, lidar, radar]` root mean squared errors.
    pub fn rmse(&self) -> Result<[f64; 4]> {
        if self.ticks == 0 {
            return Err(Error::UndefinedMetric(
                "no ticks with all sensors returning".into(),
            ));
        }
        let n = self.ticks as f64;
        Ok([self.fused, self.camera, self.lidar, self.radar].map(|s| (s / n).sqrt()))
    }
}

/// Drive one episode under direct control and accumulate gap errors.
pub fn fusion_errors_episode(
    env_cfg: &EnvConfig,
    policy: &dyn Policy,
    weather: WeatherKind,
    seed: u64,
) -> Result<FusionErrors> {
    let mut env = DrivingEnv::reset(
        env_cfg,
        weather,
        RewardWeights::default(),
        derive_seed(seed, stream::WORLD),
    )?;
    let mut rng = SimRng::derived(seed, stream::POLICY);
    let mut acc = FusionErrors::default();
    loop {
        let all_valid = env.measurements().len() == 3 && env.measurements().iter().all(|m| m.valid);
        if all_valid && env.estimator().is_tracking() {
            if let Some((gap, _)) = lead_obstacle(env.world()) {
                let ms = env.measurements();
                acc.fused += (env.estimator().state()[0] - gap).powi(2);
                acc.camera += (ms[0].values[0] - gap).powi(2);
                acc.lidar += (ms[1].values[0] - gap).powi(2);
                acc.radar += (ms[2].values[0] - gap).powi(2);
                acc.ticks += 1;
            }
        }
        if env.done() {
            break;
        }
        let a = policy.act(&env.observation(), &mut rng)?;
        env.step(a)?;
    }
    Ok(acc)
}
