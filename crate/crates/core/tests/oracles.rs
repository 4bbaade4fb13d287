mod support;

use edgedrive::bench::{compute_accuracy, compute_collision_rate};
use edgedrive::fusion::{
    ekf_update, kalman_update, GaussianEstimate, LinearObservation, NonlinearObservation,
};
use edgedrive::perception::{compute_iou, BoundingBox, DetectionCounts};
use edgedrive::rl::{tabular_q_update, value_iteration, ChainMdp, QTable};
use edgedrive::rng::SimRng;
use nalgebra::{DMatrix, DVector};
use support::*;

#[test]
fn scalar_kalman_matches_gaussian_product() {
    let mut rng = SimRng::new(1);
    for _ in 0..2000 {
        let (m, p) = (
            rng.uniform_range(-100.0, 100.0),
            10f64.powf(rng.uniform_range(-3.0, 3.0)),
        );
        let (z, r) = (
            rng.uniform_range(-100.0, 100.0),
            10f64.powf(rng.uniform_range(-3.0, 3.0)),
        );
        let obs = LinearObservation::new(
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, r),
        )
        .unwrap();
        let post = kalman_update(
            &GaussianEstimate::scalar(m, p),
            &DVector::from_element(1, z),
            &obs,
        )
        .unwrap();
        let (em, ev) = gaussian_product(m, p, z, r);
        assert!((post.mean[0] - em).abs() < 1e-9, "{m} {p} {z} {r}");
        assert!((post.covariance[(0, 0)] - ev).abs() < 1e-9);
    }
}

#[test]
fn ekf_on_linear_model_is_kalman() {
    let mut rng = SimRng::new(2);
    for _ in 0..200 {
        let mean = DVector::from_fn(3, |_, _| rng.standard_normal());
        let a = DMatrix::from_fn(3, 3, |_, _| rng.standard_normal());
        let cov = &a * a.transpose() + DMatrix::identity(3, 3) * 0.1;
        let h = DMatrix::from_fn(2, 3, |_, _| rng.standard_normal());
        let r = DMatrix::from_diagonal(&DVector::from_fn(2, |_, _| rng.uniform_range(0.1, 2.0)));
        let z = DVector::from_fn(2, |_, _| rng.standard_normal());
        let prior = GaussianEstimate::new(mean, cov).unwrap();
        let kf = kalman_update(
            &prior,
            &z,
            &LinearObservation::new(h.clone(), r.clone()).unwrap(),
        )
        .unwrap();
        let (h1, h2) = (h.clone(), h.clone());
        let nl = NonlinearObservation::new(move |x| &h1 * x, r).with_jacobian(move |_| h2.clone());
        let ekf = ekf_update(&prior, &z, &nl).unwrap();
        assert!((kf.mean - ekf.mean).amax() < 1e-12);
        assert!((kf.covariance - ekf.covariance).amax() < 1e-12);
    }
}

#[test]
fn accuracy_matches_brute_force_counts() {
    let mut rng = SimRng::new(3);
    for _ in 0..1000 {
        let n = 1 + rng.below(40);
        let pred: Vec<bool> = (0..n).map(|_| rng.uniform() < 0.4).collect();
        let truth: Vec<bool> = (0..n).map(|_| rng.uniform() < 0.4).collect();
        let (tp, tn, fp, fn_) = brute_confusion(&pred, &truth);
        let counts = DetectionCounts { tp, tn, fp, fn_ };
        let got = compute_accuracy(&counts).unwrap();
        assert_eq!(got, (100 * (tp + tn)) as f64 / n as f64);
        if (100 * (tp + tn)) % n as u64 == 0 {
            assert_eq!(got, ((100 * (tp + tn)) / n as u64) as f64);
        }
    }
}

#[test]
fn collision_rate_matches_count() {
    let mut rng = SimRng::new(4);
    for _ in 0..1000 {
        let runs = 1 + rng.below(200);
        let hits = (0..runs).filter(|_| rng.uniform() < 0.3).count() as u64;
        assert_eq!(
            compute_collision_rate(hits, runs as u64).unwrap(),
            (100 * hits) as f64 / runs as f64
        );
    }
}

#[test]
fn iou_matches_raster_and_sorted_oracles() {
    let mut rng = SimRng::new(5);
    for _ in 0..1000 {
        let ib = |rng: &mut SimRng| {
            let (x, y) = (rng.below(10) as i64, rng.below(10) as i64);
            [
                x,
                y,
                x + 1 + rng.below(6) as i64,
                y + 1 + rng.below(6) as i64,
            ]
        };
        let (a, b) = (ib(&mut rng), ib(&mut rng));
        let bb = |v: [i64; 4]| {
            BoundingBox::new(v[0] as f64, v[1] as f64, v[2] as f64, v[3] as f64).unwrap()
        };
        let (inter, union) = raster_iou(a, b);
        assert_eq!(
            compute_iou(&bb(a), &bb(b)),
            inter as f64 / union as f64,
            "{a:?} {b:?}"
        );

        let rb = |rng: &mut SimRng| {
            let (x, y) = (rng.uniform_range(-5.0, 5.0), rng.uniform_range(-5.0, 5.0));
            BoundingBox::new(
                x,
                y,
                x + rng.uniform_range(0.01, 4.0),
                y + rng.uniform_range(0.01, 4.0),
            )
            .unwrap()
        };
        let (a, b) = (rb(&mut rng), rb(&mut rng));
        assert!((compute_iou(&a, &b) - sorted_iou(&a, &b)).abs() < 1e-12);
    }
}

#[test]
fn tabular_and_linear_q_reach_value_iteration() {
    let mdp = ChainMdp { states: 5 };
    let gamma = 0.9;
    let exact = value_iteration(&mdp, gamma);
    let mut t = QTable::zeros(5, 2);
    let mut rng = SimRng::new(6);
    for _ in 0..40_000 {
        let (s, a) = (rng.below(5), rng.below(2));
        let (sn, r) = mdp.step(s, a);
        tabular_q_update(&mut t, s, a, r, sn, 0.5, gamma).unwrap();
    }
    assert!(t.max_abs_diff(&exact) < 1e-6, "{}", t.max_abs_diff(&exact));

    let lin = linear_chain_q(&mdp, gamma, 1.0, 3000);
    assert!(
        lin.max_abs_diff(&exact) < 1e-3,
        "{}",
        lin.max_abs_diff(&exact)
    );
}
