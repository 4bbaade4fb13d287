use std::io::Write;

use serde::{Deserialize, Serialize};

use super::latency::DeploymentMode;
use crate::error::{Error, Result};
use crate::perception::DetectionCounts;
use crate::sim::WeatherKind;

/// `(TP + TN) / (TP + TN + FP + FN) × 100`.
pub fn compute_accuracy(counts: &DetectionCounts) -> Result<f64> {
    let total = counts.total();
    if total == 0 {
        return Err(Error::UndefinedMetric("accuracy of zero counts".into()));
    }
    Ok(100.0 * (counts.tp + counts.tn) as f64 / total as f64)
}

pub fn compute_collision_rate(collisions: u64, runs: u64) -> Result<f64> {
    if runs == 0 {
        return Err(Error::UndefinedMetric(
            "collision rate over zero runs".into(),
        ));
    }
    Ok(100.0 * collisions as f64 / runs as f64)
}

pub fn compute_lane_departure_rate(departure_ticks: u64, total_ticks: u64) -> Result<f64> {
    if total_ticks == 0 {
        return Err(Error::UndefinedMetric(
            "lane departure rate over zero ticks".into(),
        ));
    }
    Ok(100.0 * departure_ticks as f64 / total_ticks as f64)
}

/// One episode of the closed loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub mode: DeploymentMode,
    pub weather: WeatherKind,
    pub seed: u64,
    pub collided: bool,
    pub lane_departure_ticks: u64,
    pub total_ticks: u64,
    pub mean_latency_ms: f64,
    pub mean_delay_ticks: f64,
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub matched: u64,
    pub mean_iou: Option<f64>,
    pub cumulative_reward: f64,
}

impl EpisodeMetrics {
    pub fn counts(&self) -> DetectionCounts {
        DetectionCounts {
            tp: self.tp,
            tn: self.tn,
            fp: self.fp,
            fn_: self.fn_,
        }
    }
}

/// Aggregates for one (mode, weather) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportCell {
    pub mode: DeploymentMode,
    pub weather: WeatherKind,
    pub episodes: u64,
    pub accuracy_pct: f64,
    pub mean_iou: Option<f64>,
    pub mean_latency_ms: f64,
    pub collision_rate_pct: f64,
    pub lane_departure_rate_pct: f64,
    pub mean_cumulative_reward: f64,
    pub counts: DetectionCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub cells: Vec<ReportCell>,
    pub total_episodes: u64,
    /// How true negatives enter the accuracy figure.
    pub tn_convention: String,
}

impl BenchmarkReport {
    pub fn cell(&self, mode: DeploymentMode, weather: WeatherKind) -> Option<&ReportCell> {
        self.cells
            .iter()
            .find(|c| c.mode == mode && c.weather == weather)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn cell_of(
    mode: DeploymentMode,
    weather: WeatherKind,
    eps: &mut [&EpisodeMetrics],
) -> Result<ReportCell> {
    if eps.is_empty() {
        return Err(Error::MissingCell {
            mode: mode.to_string(),
            weather: weather.to_string(),
        });
    }
    // fixed summation order regardless of how episodes arrived
    eps.sort_by(|a, b| {
        a.seed
            .cmp(&b.seed)
            .then(a.cumulative_reward.total_cmp(&b.cumulative_reward))
    });
    let mut counts = DetectionCounts::default();
    let (mut collisions, mut dep, mut ticks, mut matched) = (0u64, 0u64, 0u64, 0u64);
    let (mut latency, mut reward, mut iou) = (0.0, 0.0, 0.0);
    for e in eps.iter() {
        counts.add(&e.counts());
        collisions += e.collided as u64;
        dep += e.lane_departure_ticks;
        ticks += e.total_ticks;
        latency += e.mean_latency_ms * e.total_ticks as f64;
        reward += e.cumulative_reward;
        if let Some(m) = e.mean_iou {
            iou += m * e.matched as f64;
            matched += e.matched;
        }
    }
    let n = eps.len() as u64;
    Ok(ReportCell {
        mode,
        weather,
        episodes: n,
        accuracy_pct: compute_accuracy(&counts)?,
        mean_iou: (matched > 0).then(|| iou / matched as f64),
        mean_latency_ms: if ticks > 0 {
            latency / ticks as f64
        } else {
            0.0
        },
        collision_rate_pct: compute_collision_rate(collisions, n)?,
        lane_departure_rate_pct: compute_lane_departure_rate(dep, ticks)?,
        mean_cumulative_reward: reward / n as f64,
        counts,
    })
}

/// Per-cell rates over the requested grid, in the order given.
pub fn aggregate_report(
    metrics: &[EpisodeMetrics],
    cells: &[(DeploymentMode, WeatherKind)],
) -> Result<BenchmarkReport> {
    let mut out = Vec::with_capacity(cells.len());
    for &(mode, weather) in cells {
        let mut eps: Vec<&EpisodeMetrics> = metrics
            .iter()
            .filter(|m| m.mode == mode && m.weather == weather)
            .collect();
        out.push(cell_of(mode, weather, &mut eps)?);
    }
    Ok(BenchmarkReport {
        total_episodes: out.iter().map(|c| c.episodes).sum(),
        cells: out,
        tn_convention:
            "object-level TP/FP/FN at IoU >= threshold; TN counts free cells classified free".into(),
    })
}

/// One CSV row per episode.
pub fn write_episodes_csv<W: Write>(metrics: &[EpisodeMetrics], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "mode",
        "weather",
        "seed",
        "collided",
        "lane_departure_ticks",
        "total_ticks",
        "mean_latency_ms",
        "mean_delay_ticks",
        "tp",
        "tn",
        "fp",
        "fn",
        "matched",
        "mean_iou",
        "cumulative_reward",
    ])
    .map_err(csv_err)?;
    for m in metrics {
        w.write_record([
            m.mode.to_string(),
            m.weather.to_string(),
            m.seed.to_string(),
            m.collided.to_string(),
            m.lane_departure_ticks.to_string(),
            m.total_ticks.to_string(),
            m.mean_latency_ms.to_string(),
            m.mean_delay_ticks.to_string(),
            m.tp.to_string(),
            m.tn.to_string(),
            m.fp.to_string(),
            m.fn_.to_string(),
            m.matched.to_string(),
            m.mean_iou.map(|v| v.to_string()).unwrap_or_default(),
            m.cumulative_reward.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn episode(
        mode: DeploymentMode,
        weather: WeatherKind,
        seed: u64,
        collided: bool,
    ) -> EpisodeMetrics {
        EpisodeMetrics {
            mode,
            weather,
            seed,
            collided,
            lane_departure_ticks: 3,
            total_ticks: 60,
            mean_latency_ms: 45.0 + seed as f64,
            mean_delay_ticks: 1.0,
            tp: 2,
            tn: 100,
            fp: 1,
            fn_: 1,
            matched: 2,
            mean_iou: Some(0.7),
            cumulative_reward: 10.0 + seed as f64,
        }
    }

    #[test]
    fn accuracy_examples() {
        let c = |tp, tn, fp, fn_| DetectionCounts { tp, tn, fp, fn_ };
        assert_eq!(compute_accuracy(&c(50, 50, 0, 0)).unwrap(), 100.0);
        assert_eq!(compute_accuracy(&c(40, 40, 10, 10)).unwrap(), 80.0);
        assert_eq!(compute_accuracy(&c(0, 0, 5, 5)).unwrap(), 0.0);
        assert!(matches!(
            compute_accuracy(&c(0, 0, 0, 0)),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn rate_examples() {
        assert_eq!(compute_collision_rate(0, 50).unwrap(), 0.0);
        assert_eq!(compute_collision_rate(3, 50).unwrap(), 6.0);
        assert_eq!(compute_collision_rate(50, 50).unwrap(), 100.0);
        assert!(compute_collision_rate(1, 0).is_err());
        assert_eq!(compute_lane_departure_rate(0, 600).unwrap(), 0.0);
        assert_eq!(compute_lane_departure_rate(30, 600).unwrap(), 5.0);
        assert_eq!(compute_lane_departure_rate(600, 600).unwrap(), 100.0);
        assert!(compute_lane_departure_rate(0, 0).is_err());
    }

    #[test]
    fn single_episode_cell_mirrors_episode() {
        let e = episode(DeploymentMode::Edge, WeatherKind::Fog, 4, true);
        let r = aggregate_report(
            std::slice::from_ref(&e),
            &[(DeploymentMode::Edge, WeatherKind::Fog)],
        )
        .unwrap();
        let c = &r.cells[0];
        assert_eq!(c.episodes, 1);
        assert_eq!(c.collision_rate_pct, 100.0);
        assert_eq!(c.mean_latency_ms, e.mean_latency_ms);
        assert_eq!(c.lane_departure_rate_pct, 5.0);
        assert_eq!(c.mean_iou, Some(0.7));
        assert_eq!(c.accuracy_pct, compute_accuracy(&e.counts()).unwrap());
    }

    #[test]
    fn collision_half_and_order_invariance() {
        let cell = [(DeploymentMode::Cloud, WeatherKind::Snow)];
        let a = episode(DeploymentMode::Cloud, WeatherKind::Snow, 1, true);
        let b = episode(DeploymentMode::Cloud, WeatherKind::Snow, 2, false);
        let r1 = aggregate_report(&[a.clone(), b.clone()], &cell).unwrap();
        let r2 = aggregate_report(&[b, a], &cell).unwrap();
        assert_eq!(r1.cells[0].collision_rate_pct, 50.0);
        assert_eq!(r1, r2);
    }

    #[test]
    fn empty_cell_is_named() {
        let e = episode(DeploymentMode::Edge, WeatherKind::Fog, 4, true);
        let err =
            aggregate_report(&[e], &[(DeploymentMode::Cloud, WeatherKind::Rain)]).unwrap_err();
        assert_eq!(
            err,
            Error::MissingCell {
                mode: "cloud".into(),
                weather: "rain".into()
            }
        );
    }

    #[test]
    fn csv_has_header_and_rows() {
        let e = episode(DeploymentMode::Edge, WeatherKind::Fog, 4, true);
        let mut buf = Vec::new();
        write_episodes_csv(&[e.clone(), e], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("mode,weather,seed,collided"));
    }
}
