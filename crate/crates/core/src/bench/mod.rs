//! Closed-loop benchmark under edge or cloud latency, and the metrics it
//! reports.

mod latency;
mod pipeline;
mod report;

pub use latency::{
    action_delay_ticks, sample_latency, DeploymentConfig, DeploymentMode, Jittered, LatencyModel,
};
pub use pipeline::{
    episode_seed, fusion_errors_episode, run_benchmark, run_pipeline_episode, FusionErrors,
    PerceptionModels, PipelineConfig, Trajectory,
};
pub use report::{
    aggregate_report, compute_accuracy, compute_collision_rate, compute_lane_departure_rate,
    write_episodes_csv, BenchmarkReport, EpisodeMetrics, ReportCell,
};
