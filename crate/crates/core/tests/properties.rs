mod support;

use edgedrive::bench::{
    action_delay_ticks, aggregate_report, sample_latency, DeploymentMode, EpisodeMetrics,
    LatencyModel,
};
use edgedrive::fusion::{kalman_update, weighted_fuse, GaussianEstimate, LinearObservation};
use edgedrive::perception::{compute_iou, match_detections, BoundingBox, CellLabel, Detection};
use edgedrive::rl::{
    cumulative_reward, select_action, DiscountConvention, EpsilonSchedule, ReplayBuffer, Transition,
};
use edgedrive::rng::SimRng;
use edgedrive::sensors::{variance_factor, SensorSuite};
use edgedrive::sim::{
    detect_collision_with, Obstacle, VehicleState, WeatherCondition, WeatherKind,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn bbox() -> impl Strategy<Value = BoundingBox> {
    (-10.0..10.0f64, -10.0..10.0f64, 0.0..5.0f64, 0.0..5.0f64)
        .prop_map(|(x, y, w, h)| BoundingBox::new(x, y, x + w, y + h).unwrap())
}

fn weather_kind() -> impl Strategy<Value = WeatherKind> {
    prop::sample::select(WeatherKind::ALL.to_vec())
}

proptest! {
    #[test]
    fn iou_symmetric_and_bounded(a in bbox(), b in bbox()) {
        let ab = compute_iou(&a, &b);
        prop_assert_eq!(ab, compute_iou(&b, &a));
        prop_assert!((0.0..=1.0).contains(&ab));
        if a.area() > 0.0 {
            prop_assert_eq!(compute_iou(&a, &a), 1.0);
        }
    }

    #[test]
    fn matching_conserves_counts(dets in prop::collection::vec(bbox(), 0..6), truths in prop::collection::vec(bbox(), 0..6), thr in 0.0..1.0f64, tn in 0u64..100) {
        let dets: Vec<Detection> = dets.into_iter().map(|b| Detection { bbox: b, score: 0.9, label: CellLabel::Obstacle }).collect();
        let m = match_detections(&dets, &truths, thr, tn);
        prop_assert_eq!(m.counts.tp + m.counts.fp, dets.len() as u64);
        prop_assert_eq!(m.counts.tp + m.counts.fn_, truths.len() as u64);
        prop_assert_eq!(m.counts.tn, tn);
        prop_assert!(m.pairs.iter().all(|p| p.2 >= thr));
    }

    #[test]
    fn kalman_covariance_stays_symmetric_psd(seed in any::<u64>(), steps in 1usize..20) {
        let mut rng = SimRng::new(seed);
        let a = DMatrix::from_fn(3, 3, |_, _| rng.standard_normal());
        let mut est = GaussianEstimate::new(DVector::zeros(3), &a * a.transpose() + DMatrix::identity(3, 3)).unwrap();
        for _ in 0..steps {
            let h = DMatrix::from_fn(1, 3, |_, _| rng.standard_normal());
            let r = DMatrix::from_element(1, 1, rng.uniform_range(0.01, 5.0));
            let before = est.covariance.trace();
            est = kalman_update(&est, &DVector::from_element(1, rng.standard_normal()), &LinearObservation::new(h, r).unwrap()).unwrap();
            prop_assert!(est.asymmetry() < 1e-12);
            prop_assert!(est.min_eigenvalue() > -1e-10);
            prop_assert!(est.covariance.trace() <= before + 1e-9);
        }
    }

    #[test]
    fn fusion_is_tighter_than_any_input(xs in prop::collection::vec((-50.0..50.0f64, 0.01..10.0f64), 1..6)) {
        let (m, v) = weighted_fuse(&xs).unwrap();
        let lo = xs.iter().map(|x| x.0).fold(f64::INFINITY, f64::min);
        let hi = xs.iter().map(|x| x.0).fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(m >= lo - 1e-9 && m <= hi + 1e-9);
        prop_assert!(xs.iter().all(|x| v <= x.1 + 1e-15));
    }

    #[test]
    fn noise_grows_with_intensity(kind in weather_kind(), a in 0.0..1.0f64, b in 0.0..1.0f64) {
        prop_assume!(kind != WeatherKind::Clear);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let suite = SensorSuite::default();
        for spec in suite.specs() {
            let f_lo = variance_factor(spec, &WeatherCondition::new(kind, lo).unwrap());
            let f_hi = variance_factor(spec, &WeatherCondition::new(kind, hi).unwrap());
            prop_assert!(f_lo <= f_hi);
        }
    }

    #[test]
    fn collision_is_symmetric(x1 in -20.0..20.0f64, y1 in -3.0..3.0f64, x2 in -20.0..20.0f64, y2 in -3.0..3.0f64, e in 0.2..3.0f64) {
        let ego = |x, y| VehicleState { x, y, v: 10.0, heading: 0.0 };
        let ob = |x, y| Obstacle { id: 0, x, y, vx: 0.0, half_extent: e };
        prop_assert_eq!(
            detect_collision_with(&ego(x1, y1), &[ob(x2, y2)], e, e),
            detect_collision_with(&ego(x2, y2), &[ob(x1, y1)], e, e)
        );
    }

    #[test]
    fn epsilon_schedule_is_monotone(start in 0.0..1.0f64, frac in 0.0..1.0f64, decay in 1u64..10_000, t in 0u64..20_000) {
        let s = EpsilonSchedule { start, end: start * frac, decay_ticks: decay };
        let (a, b) = (s.value(t), s.value(t + 1));
        prop_assert!(b <= a);
        prop_assert!(a <= start && a >= start * frac - 1e-15);
    }

    #[test]
    fn delay_is_monotone_in_latency(a in 0.0..1000.0f64, b in 0.0..1000.0f64) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(action_delay_ticks(lo, 0.1) <= action_delay_ticks(hi, 0.1));
    }

    #[test]
    fn latency_is_never_negative(seed in any::<u64>(), kind in weather_kind()) {
        let mut rng = SimRng::new(seed);
        for model in [LatencyModel::edge(), LatencyModel::cloud()] {
            prop_assert!(sample_latency(&model, kind, &mut rng) >= 0.0);
        }
    }

    #[test]
    fn undiscounted_first_is_discounted_over_gamma(rs in prop::collection::vec(-5.0..5.0f64, 0..30), g in 0.05..1.0f64) {
        let a = cumulative_reward(&rs, g, DiscountConvention::FirstDiscounted).unwrap();
        let b = cumulative_reward(&rs, g, DiscountConvention::FirstUndiscounted).unwrap();
        prop_assert!((a - g * b).abs() < 1e-9);
    }

    #[test]
    fn greedy_choice_is_an_argmax(q in prop::collection::vec(-10.0..10.0f64, 1..8), seed in any::<u64>()) {
        let mut rng = SimRng::new(seed);
        let a = select_action(&q, 0.0, &mut rng).unwrap();
        prop_assert!(q.iter().all(|v| *v <= q[a]));
    }

    #[test]
    fn report_ignores_episode_order(seed in any::<u64>(), n in 1usize..12) {
        let mut rng = SimRng::new(seed);
        let metrics: Vec<EpisodeMetrics> = (0..n).map(|i| EpisodeMetrics {
            mode: DeploymentMode::Edge,
            weather: WeatherKind::Rain,
            seed: i as u64,
            collided: rng.uniform() < 0.5,
            lane_departure_ticks: rng.below(10) as u64,
            total_ticks: 10,
            mean_latency_ms: rng.uniform_range(40.0, 60.0),
            mean_delay_ticks: 1.0,
            tp: rng.below(5) as u64,
            tn: rng.below(50) as u64,
            fp: rng.below(5) as u64,
            fn_: rng.below(5) as u64,
            matched: 0,
            mean_iou: None,
            cumulative_reward: rng.standard_normal(),
        }).collect();
        let cells = [(DeploymentMode::Edge, WeatherKind::Rain)];
        let a = aggregate_report(&metrics, &cells).unwrap();
        let mut shuffled = metrics.clone();
        shuffled.reverse();
        shuffled.rotate_left(n / 2);
        prop_assert_eq!(a.to_json(), aggregate_report(&shuffled, &cells).unwrap().to_json());
        prop_assert_eq!(a.total_episodes, n as u64);
    }
}

/// Each slot of a full buffer is drawn about equally often.
#[test]
fn replay_sampling_is_uniform() {
    let mut buf = ReplayBuffer::new(20, SimRng::new(8)).unwrap();
    for i in 0..35 {
        buf.push(Transition {
            s: vec![i as f64],
            a: 0,
            r: 0.0,
            s_next: vec![],
            done: false,
        });
    }
    let mut hits = [0u32; 20];
    let draws = 20_000;
    for _ in 0..draws {
        for i in buf.sample_indices(4).unwrap() {
            hits[i] += 1;
        }
    }
    let expected = (draws * 4) as f64 / 20.0;
    let chi2: f64 = hits
        .iter()
        .map(|h| (*h as f64 - expected).powi(2) / expected)
        .sum();
    // 19 degrees of freedom; 43.8 is the 0.999 quantile.
    assert!(chi2 < 43.8, "chi2 {chi2}, hits {hits:?}");
    // the ring overwrote the oldest fifteen
    assert_eq!(buf.get(0).unwrap().s, vec![20.0]);
}

#[test]
fn intensity_monotone_on_grid() {
    let suite = SensorSuite::default();
    for kind in [WeatherKind::Fog, WeatherKind::Rain, WeatherKind::Snow] {
        for spec in suite.specs() {
            let fs: Vec<f64> = (0..=10)
                .map(|i| {
                    variance_factor(spec, &WeatherCondition::new(kind, i as f64 / 10.0).unwrap())
                })
                .collect();
            assert!(
                fs.windows(2).all(|w| w[0] <= w[1]),
                "{kind:?} {:?}",
                spec.kind
            );
        }
    }
}

#[test]
fn block_means_helper() {
    assert_eq!(
        support::block_means(&[1.0, 2.0, 3.0, 4.0, 5.0], 2),
        vec![1.5, 3.5]
    );
}
