//! Offline studies behind the `evaluate` command: trained vs random policy
//! under direct control, perception compression, and fusion error by
//! weather.

use serde::{Deserialize, Serialize};

use crate::bench::{
    compute_collision_rate, compute_lane_departure_rate, episode_seed, fusion_errors_episode,
    FusionErrors,
};
use crate::error::{Error, Result};
use crate::fusion::inverse_variance_weights;
use crate::nn::{prune_by_magnitude, Mlp, QuantizedMlp};
use crate::perception::{cell_accuracy, synthetic_dataset, CellLabel, PerceptionConfig};
use crate::rl::{
    cumulative_reward, run_direct_episode, BrakingPolicy, DiscountConvention, EnvConfig, Policy,
    RandomPolicy, RewardWeights,
};
use crate::rng::{derive_seed, stream};
use crate::sensors::{noise_variance_for, SensorSuite};
use crate::sim::{WeatherCondition, WeatherKind};

/// Aggregate of one policy over a weather's evaluation episodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyStats {
    pub collision_rate_pct: f64,
    pub lane_departure_rate_pct: f64,
    pub mean_cumulative_reward: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyComparison {
    pub weather: WeatherKind,
    pub episodes: u64,
    pub policy: PolicyStats,
    pub random: PolicyStats,
    /// Relative collision reduction against the random policy, in percent;
    /// absent when the random policy never collides.
    pub collision_reduction_pct: Option<f64>,
}

fn policy_stats(
    env: &EnvConfig,
    reward: RewardWeights,
    discount: (f64, DiscountConvention),
    policy: &dyn Policy,
    weather: WeatherKind,
    seeds: &[u64],
) -> Result<PolicyStats> {
    let (mut collisions, mut departed, mut ticks, mut total_reward) = (0u64, 0u64, 0u64, 0.0);
    for &seed in seeds {
        let ep = run_direct_episode(env, reward, policy, weather, seed)?;
        collisions += ep.collided as u64;
        departed += ep.lane_departure_ticks as u64;
        ticks += ep.actions.len() as u64;
        total_reward += cumulative_reward(&ep.rewards, discount.0, discount.1)?;
    }
    Ok(PolicyStats {
        collision_rate_pct: compute_collision_rate(collisions, seeds.len() as u64)?,
        lane_departure_rate_pct: compute_lane_departure_rate(departed, ticks)?,
        mean_cumulative_reward: total_reward / seeds.len() as f64,
    })
}

/// Run `policy` and the uniform-random policy on identical episode seeds
/// under direct control.
pub fn compare_policies(
    env: &EnvConfig,
    reward: RewardWeights,
    discount: (f64, DiscountConvention),
    policy: &dyn Policy,
    weathers: &[WeatherKind],
    episodes: u64,
    seed: u64,
) -> Result<Vec<PolicyComparison>> {
    if episodes == 0 {
        return Err(Error::Usage("no evaluation episodes requested".into()));
    }
    weathers
        .iter()
        .map(|&w| {
            let seeds: Vec<u64> = (0..episodes).map(|i| episode_seed(seed, w, i)).collect();
            let trained = policy_stats(env, reward, discount, policy, w, &seeds)?;
            let random = policy_stats(env, reward, discount, &RandomPolicy, w, &seeds)?;
            let reduction = (random.collision_rate_pct > 0.0)
                .then(|| 100.0 * (1.0 - trained.collision_rate_pct / random.collision_rate_pct));
            Ok(PolicyComparison {
                weather: w,
                episodes,
                policy: trained,
                random,
                collision_reduction_pct: reduction,
            })
        })
        .collect()
}

/// Held-out accuracy of the cell classifier before and after compression.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompressionStudy {
    pub heldout_grids: usize,
    /// Accuracy of labelling every cell free.
    pub all_free_accuracy_pct: f64,
    pub full_accuracy_pct: f64,
    pub int8_accuracy_pct: f64,
    pub int8_delta_pts: f64,
    pub int8_size_bytes: usize,
    pub full_size_bytes: usize,
    pub prune_fraction: f64,
    /// Fraction of weights actually removed.
    pub pruned_weight_fraction: f64,
    /// Relative drop in nonzero multiply-accumulates.
    pub mac_reduction: f64,
    /// One weight's share of the total; `mac_reduction` is a multiple of it.
    pub mac_granularity: f64,
    pub pruned_accuracy_pct: f64,
    pub pruned_drop_pts: f64,
}

/// Seed of the held-out grids for a master seed.
pub fn heldout_seed(master: u64) -> u64 {
    derive_seed(master, stream::HELDOUT)
}

/// Seed of the classifier's training data and initialization.
pub fn classifier_seed(master: u64) -> u64 {
    derive_seed(master, stream::CLASSIFIER)
}

pub fn compression_study(
    cfg: &PerceptionConfig,
    sensors: &SensorSuite,
    model: &Mlp,
    heldout_grids: usize,
    prune_fraction: f64,
    master_seed: u64,
) -> Result<CompressionStudy> {
    let data = synthetic_dataset(cfg, sensors, heldout_grids, heldout_seed(master_seed));
    let cells: usize = data.iter().map(|(_, l)| l.len()).sum();
    let free: usize = data
        .iter()
        .map(|(_, l)| l.iter().filter(|c| **c == CellLabel::Free).count())
        .sum();
    if cells == 0 {
        return Err(Error::UndefinedMetric("held-out set has no cells".into()));
    }
    let full = cell_accuracy(model, &data, cfg.score_threshold)?;
    let int8 = QuantizedMlp::from_mlp(model);
    let int8_acc = cell_accuracy(&int8, &data, cfg.score_threshold)?;
    let (pruned, removed) = prune_by_magnitude(model, prune_fraction)?;
    let pruned_acc = cell_accuracy(&pruned, &data, cfg.score_threshold)?;
    let macs = model.active_macs() as f64;
    Ok(CompressionStudy {
        heldout_grids,
        all_free_accuracy_pct: 100.0 * free as f64 / cells as f64,
        full_accuracy_pct: full,
        int8_accuracy_pct: int8_acc,
        int8_delta_pts: int8_acc - full,
        int8_size_bytes: int8.size_bytes(),
        full_size_bytes: model.param_count() * std::mem::size_of::<f64>(),
        prune_fraction,
        pruned_weight_fraction: removed,
        mac_reduction: 1.0 - pruned.active_macs() as f64 / macs,
        mac_granularity: 1.0 / model.weight_count() as f64,
        pruned_accuracy_pct: pruned_acc,
        pruned_drop_pts: full - pruned_acc,
    })
}

/// Gap error of the fused estimate against each raw sensor in one weather.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionStudy {
    pub weather: WeatherKind,
    pub episodes: u64,
    pub ticks: u64,
    pub fused_rmse: f64,
    pub camera_rmse: f64,
    pub lidar_rmse: f64,
    pub radar_rmse: f64,
    pub best_single_rmse: f64,
    /// Intensity at which the weights below are computed.
    pub intensity: f64,
    /// Normalized inverse-variance gap weights `[camera, lidar, radar]`.
    pub gap_weights: [f64; 3],
}

/// Normalized inverse-variance weights of the three gap channels under
/// `weather`.
pub fn gap_weights(sensors: &SensorSuite, weather: &WeatherCondition) -> Result<[f64; 3]> {
    let vars: Vec<f64> = sensors
        .specs()
        .iter()
        .map(|s| noise_variance_for(s, weather)[0])
        .collect();
    let w = inverse_variance_weights(&vars)?;
    Ok([w[0], w[1], w[2]])
}

/// Drive `episodes` braking-policy episodes per weather and compare fused
/// and single-sensor gap errors.
pub fn fusion_study(
    env: &EnvConfig,
    weathers: &[WeatherKind],
    episodes: u64,
    seed: u64,
) -> Result<Vec<FusionStudy>> {
    let base = derive_seed(seed, stream::FUSION);
    let policy = BrakingPolicy::default();
    let (lo, hi) = env.scenario.intensity_range;
    weathers
        .iter()
        .map(|&w| {
            let mut acc = FusionErrors::default();
            for i in 0..episodes {
                acc.add(&fusion_errors_episode(
                    env,
                    &policy,
                    w,
                    episode_seed(base, w, i),
                )?);
            }
            let [fused, camera, lidar, radar] = acc.rmse()?;
            let intensity = if w == WeatherKind::Clear {
                0.0
            } else {
                0.5 * (lo + hi)
            };
            Ok(FusionStudy {
                weather: w,
                episodes,
                ticks: acc.ticks,
                fused_rmse: fused,
                camera_rmse: camera,
                lidar_rmse: lidar,
                radar_rmse: radar,
                best_single_rmse: camera.min(lidar).min(radar),
                intensity,
                gap_weights: gap_weights(&env.sensors, &WeatherCondition::new(w, intensity)?)?,
            })
        })
        .collect()
}

/// Everything `evaluate` writes to `evaluation.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub seed: u64,
    /// `"trained"` or `"random"`.
    pub policy: String,
    pub policies: Vec<PolicyComparison>,
    pub compression: CompressionStudy,
    pub fusion: Vec<FusionStudy>,
}

impl EvaluationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
