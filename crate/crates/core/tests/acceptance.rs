//! Acceptance gate: one PASS/FAIL line per criterion. Exits non-zero when
//! any criterion fails.

mod support;

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use edgedrive::bench::{
    aggregate_report, compute_accuracy, compute_collision_rate, run_benchmark, DeploymentMode,
    PerceptionModels,
};
use edgedrive::config::RunConfig;
use edgedrive::evaluation::{classifier_seed, compare_policies, compression_study, fusion_study};
use edgedrive::fusion::{
    ekf_update, kalman_update, GaussianEstimate, LinearObservation, NonlinearObservation,
};
use edgedrive::nn::{gradcheck_suite, Mlp, GRAD_CHECK_TOLERANCE};
use edgedrive::perception::{compute_iou, train_cell_classifier, BoundingBox, DetectionCounts};
use edgedrive::rl::{
    select_action, tabular_q_update, train_agent, value_iteration, ActionSpace, ChainMdp, QPolicy,
    QTable, STATE_FEATURES,
};
use edgedrive::rng::SimRng;
use edgedrive::sim::WeatherKind;
use nalgebra::{DMatrix, DVector};
use support::*;

const SEED: u64 = 42;

const KF_CASES: usize = 10_000;
const EKF_CASES: usize = 1_000;
const KF_TOL: f64 = 1e-9;
const EKF_TOL: f64 = 1e-12;
const KF_BUDGET: Duration = Duration::from_secs(10);

const GRAD_SEEDS: u64 = 100;
const GRAD_BUDGET: Duration = Duration::from_secs(30);

const EPS_DRAWS: usize = 100_000;
const EPS_TOL: f64 = 0.01;
const EPS_BUDGET: Duration = Duration::from_secs(5);

const TABULAR_TOL: f64 = 1e-6;
const LINEAR_TOL: f64 = 1e-3;

const TRAIN_EPISODES: usize = 2000;
const EVAL_EPISODES: u64 = 200;
const MIN_REDUCTION_PCT: f64 = 50.0;
/// Blocks the final third of the reward curve is split into.
const TREND_BLOCKS: usize = 4;
/// Width of the strict moving-average report.
const SMOOTH_WINDOW: usize = 100;

const MIN_LATENCY_RATIO: f64 = 4.0;
const BENCH_EPISODES: u64 = 200;

const FUSION_EPISODES: u64 = 500;

const MAX_INT8_DELTA_PTS: f64 = 2.0;
const PRUNE_FRACTION: f64 = 0.3;
const MAX_PRUNE_DROP_PTS: f64 = 5.0;

const METRIC_CASES: usize = 1000;
const REAL_TOL: f64 = 1e-12;

struct Gate {
    failed: Vec<u32>,
}

impl Gate {
    fn report(&mut self, id: u32, name: &str, ok: bool, detail: String) {
        println!(
            "{} {id:>2} {name}: {detail}",
            if ok { "PASS" } else { "FAIL" }
        );
        if !ok {
            self.failed.push(id);
        }
    }
}

fn secs(d: Duration) -> String {
    format!("{:.2}s", d.as_secs_f64())
}

fn fusion_oracle() -> (bool, String) {
    let t = Instant::now();
    let mut rng = SimRng::new(101);
    let mut kf_err = 0f64;
    for _ in 0..KF_CASES {
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
        kf_err = kf_err
            .max((post.mean[0] - em).abs())
            .max((post.covariance[(0, 0)] - ev).abs());
    }
    let mut ekf_err = 0f64;
    for _ in 0..EKF_CASES {
        let mean = DVector::from_fn(3, |_, _| rng.standard_normal());
        let a = DMatrix::from_fn(3, 3, |_, _| rng.standard_normal());
        let prior = GaussianEstimate::new(mean, &a * a.transpose() + DMatrix::identity(3, 3) * 0.1)
            .unwrap();
        let h = DMatrix::from_fn(2, 3, |_, _| rng.standard_normal());
        let r = DMatrix::from_diagonal(&DVector::from_fn(2, |_, _| rng.uniform_range(0.1, 2.0)));
        let z = DVector::from_fn(2, |_, _| rng.standard_normal());
        let kf = kalman_update(
            &prior,
            &z,
            &LinearObservation::new(h.clone(), r.clone()).unwrap(),
        )
        .unwrap();
        let (h1, h2) = (h.clone(), h);
        let nl = NonlinearObservation::new(move |x| &h1 * x, r).with_jacobian(move |_| h2.clone());
        let ekf = ekf_update(&prior, &z, &nl).unwrap();
        ekf_err = ekf_err
            .max((kf.mean - ekf.mean).amax())
            .max((kf.covariance - ekf.covariance).amax());
    }
    let el = t.elapsed();
    (
        kf_err < KF_TOL && ekf_err < EKF_TOL && el < KF_BUDGET,
        format!("KF max err {kf_err:.2e} over {KF_CASES}, EKF-vs-KF max err {ekf_err:.2e} over {EKF_CASES}, {}", secs(el)),
    )
}

fn gradient_fidelity(cfg: &RunConfig) -> (bool, String) {
    let t = Instant::now();
    let mut sizes = vec![STATE_FEATURES];
    sizes.extend(&cfg.agent.hidden);
    sizes.push(ActionSpace::SIZE);
    let rows = gradcheck_suite(GRAD_SEEDS, &sizes, 0.0).unwrap();
    let el = t.elapsed();
    let parts: Vec<String> = rows
        .iter()
        .map(|r| format!("{} {:.2e}", r.case, r.max_relative_error))
        .collect();
    (
        rows.len() == 3
            && rows.iter().all(|r| r.passed() && r.seeds == GRAD_SEEDS)
            && el < GRAD_BUDGET,
        format!(
            "{} (tol {GRAD_CHECK_TOLERANCE:.0e}, {GRAD_SEEDS} seeds), {}",
            parts.join(", "),
            secs(el)
        ),
    )
}

fn epsilon_distribution() -> (bool, String) {
    let t = Instant::now();
    let q = [0.3, 1.7, -0.4, 0.9];
    let greedy = 1;
    let n = q.len() as f64;
    let mut rng = SimRng::new(303);
    let mut worst = 0f64;
    for eps in [0.0, 0.1, 0.5, 1.0] {
        let mut hits = [0usize; 4];
        for _ in 0..EPS_DRAWS {
            hits[select_action(&q, eps, &mut rng).unwrap()] += 1;
        }
        for (a, h) in hits.iter().enumerate() {
            let expected = if a == greedy {
                1.0 - eps + eps / n
            } else {
                eps / n
            };
            worst = worst.max((*h as f64 / EPS_DRAWS as f64 - expected).abs());
        }
    }
    let el = t.elapsed();
    (
        worst <= EPS_TOL && el < EPS_BUDGET,
        format!(
            "max frequency deviation {worst:.4} over {EPS_DRAWS} draws per epsilon, {}",
            secs(el)
        ),
    )
}

fn fixed_point() -> (bool, String) {
    let mdp = ChainMdp { states: 5 };
    let gamma = 0.9;
    let exact = value_iteration(&mdp, gamma);
    let mut table = QTable::zeros(5, ChainMdp::ACTIONS);
    let mut rng = SimRng::new(404);
    for _ in 0..40_000 {
        let (s, a) = (rng.below(5), rng.below(ChainMdp::ACTIONS));
        let (sn, r) = mdp.step(s, a);
        tabular_q_update(&mut table, s, a, r, sn, 0.5, gamma).unwrap();
    }
    let tab = table.max_abs_diff(&exact);
    let lin = linear_chain_q(&mdp, gamma, 1.0, 3000).max_abs_diff(&exact);
    (
        tab < TABULAR_TOL && lin < LINEAR_TOL,
        format!("tabular max err {tab:.2e}, linear max err {lin:.2e}"),
    )
}

/// Final third of the curve in blocks: passes when no block mean falls
/// below its predecessor by more than two standard errors of a difference.
fn trend(rewards: &[f64]) -> (bool, String) {
    let tail = &rewards[rewards.len() - rewards.len() / 3..];
    let blocks = block_means(tail, TREND_BLOCKS);
    let len = tail.len() / TREND_BLOCKS;
    let sigma = sample_std(tail);
    let bound = 2.0 * sigma * (2.0 / len as f64).sqrt();
    let worst_drop = blocks
        .windows(2)
        .map(|w| w[0] - w[1])
        .fold(f64::NEG_INFINITY, f64::max);

    let smooth: Vec<f64> = rewards
        .windows(SMOOTH_WINDOW)
        .map(|w| w.iter().sum::<f64>() / SMOOTH_WINDOW as f64)
        .collect();
    let smooth_tail = &smooth[smooth.len() - smooth.len() / 3..];
    let strict_drop = smooth_tail
        .windows(2)
        .map(|w| w[0] - w[1])
        .fold(0f64, f64::max);

    let shown: Vec<String> = blocks.iter().map(|b| format!("{b:.2}")).collect();
    (
        worst_drop <= bound,
        format!(
            "final-third blocks [{}], largest decline {worst_drop:.2} vs bound {bound:.2}; strict {SMOOTH_WINDOW}-episode moving average largest decline {strict_drop:.2}",
            shown.join(", ")
        ),
    )
}

fn rl_convergence(cfg: &RunConfig) -> (bool, String, QPolicy) {
    let t = Instant::now();
    let outcome = train_agent(
        &cfg.env(),
        &cfg.agent,
        &cfg.training.weathers,
        TRAIN_EPISODES,
        SEED,
    )
    .unwrap();
    let rewards: Vec<f64> = outcome.curve.iter().map(|p| p.cumulative_reward).collect();
    let (trend_ok, trend_detail) = trend(&rewards);
    let policy = QPolicy::greedy(outcome.qnet);
    let rows = compare_policies(
        &cfg.env(),
        cfg.agent.reward,
        (cfg.agent.gamma, cfg.agent.discount_convention),
        &policy,
        &WeatherKind::ALL,
        EVAL_EPISODES,
        SEED,
    )
    .unwrap();
    let mut ok = trend_ok;
    let mut parts = Vec::new();
    for r in &rows {
        let red = r.collision_reduction_pct;
        ok &= red.is_some_and(|v| v >= MIN_REDUCTION_PCT);
        parts.push(format!(
            "{} {:.1}% vs random {:.1}%",
            r.weather.name(),
            r.policy.collision_rate_pct,
            r.random.collision_rate_pct
        ));
    }
    let detail = format!(
        "{trend_detail}; collisions {}; {}",
        parts.join(", "),
        secs(t.elapsed())
    );
    (ok, detail, policy)
}

fn latency_trend(cfg: &RunConfig, policy: &QPolicy, classifier: &Mlp) -> (bool, String) {
    let t = Instant::now();
    let pipe = cfg.pipeline();
    let min_ratio = WeatherKind::ALL
        .iter()
        .map(|w| pipe.deployment.cloud.mean_ms(*w) / pipe.deployment.edge.mean_ms(*w))
        .fold(f64::INFINITY, f64::min);
    let models = PerceptionModels::new(classifier.clone());
    let metrics = run_benchmark(
        &pipe,
        Some(&models),
        policy,
        &DeploymentMode::ALL,
        &WeatherKind::ALL,
        BENCH_EPISODES,
        SEED,
        0,
    )
    .unwrap();
    let cells: Vec<_> = DeploymentMode::ALL
        .iter()
        .flat_map(|m| WeatherKind::ALL.iter().map(move |w| (*m, *w)))
        .collect();
    let report = aggregate_report(&metrics, &cells).unwrap();
    let mut ok = min_ratio >= MIN_LATENCY_RATIO;
    let mut parts = Vec::new();
    for w in WeatherKind::ALL {
        let edge = report.cell(DeploymentMode::Edge, w).unwrap();
        let cloud = report.cell(DeploymentMode::Cloud, w).unwrap();
        let (e, c) = (edge.collision_rate_pct, cloud.collision_rate_pct);
        ok &= c >= e;
        if matches!(w, WeatherKind::Fog | WeatherKind::Snow) {
            ok &= c > e;
        }
        parts.push(format!(
            "{} edge {e:.1}% / cloud {c:.1}% ({:.0}/{:.0} ms)",
            w.name(),
            edge.mean_latency_ms,
            cloud.mean_latency_ms
        ));
    }
    (
        ok,
        format!(
            "min cloud/edge latency ratio {min_ratio:.2}; {}; {}",
            parts.join(", "),
            secs(t.elapsed())
        ),
    )
}

fn adaptive_weighting(cfg: &RunConfig) -> (bool, String) {
    let t = Instant::now();
    let study = fusion_study(
        &cfg.env(),
        &[WeatherKind::Clear, WeatherKind::Fog, WeatherKind::Snow],
        FUSION_EPISODES,
        SEED,
    )
    .unwrap();
    let mut ok = true;
    let mut parts = Vec::new();
    for s in &study[1..] {
        ok &= s.fused_rmse < s.best_single_rmse;
        parts.push(format!(
            "{} fused {:.3} vs best single {:.3}",
            s.weather.name(),
            s.fused_rmse,
            s.best_single_rmse
        ));
    }
    let (clear, fog) = (study[0].gap_weights[0], study[1].gap_weights[0]);
    ok &= fog < clear;
    (
        ok,
        format!(
            "{}; camera weight fog {fog:.4} < clear {clear:.4}; {}",
            parts.join(", "),
            secs(t.elapsed())
        ),
    )
}

fn compression(cfg: &RunConfig, model: &Mlp) -> (bool, String) {
    let t = Instant::now();
    let c = compression_study(
        &cfg.perception,
        &cfg.sensors,
        model,
        cfg.evaluation.heldout_grids,
        PRUNE_FRACTION,
        SEED,
    )
    .unwrap();
    let ok = c.int8_delta_pts.abs() <= MAX_INT8_DELTA_PTS
        && (c.mac_reduction - PRUNE_FRACTION).abs() <= c.mac_granularity
        && c.pruned_drop_pts <= MAX_PRUNE_DROP_PTS;
    (
        ok,
        format!(
            "int8 delta {:+.2} pts, mac reduction {:.3} (granularity {:.4}), pruned drop {:+.2} pts, {}",
            c.int8_delta_pts,
            c.mac_reduction,
            c.mac_granularity,
            c.pruned_drop_pts,
            secs(t.elapsed())
        ),
    )
}

const SMALL: &str = r#"{
  "scenario": {"max_ticks": 60},
  "perception": {"train_grids": 60, "train_steps": 400},
  "agent": {"warmup": 64, "batch_size": 16, "replay_capacity": 2000, "hidden": [16]},
  "benchmark": {"episodes": 8},
  "evaluation": {"policy_episodes": 8, "fusion_episodes": 8, "heldout_grids": 40}
}"#;

const COMMANDS: [&[&str]; 4] = [
    &["train", "--episodes", "20"],
    &["benchmark"],
    &["evaluate"],
    &["gradcheck", "--seeds", "3"],
];

/// Runs every command in a fresh directory and returns each output file
/// and stdout in order.
fn cli_outputs() -> Vec<(String, Vec<u8>)> {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("cfg.json"), SMALL).unwrap();
    let mut outs = Vec::new();
    for cmd in COMMANDS {
        let o = Command::new(env!("CARGO_BIN_EXE_edgedrive"))
            .args(["--config", "cfg.json", "--out-dir", "run"])
            .args(cmd)
            .current_dir(dir.path())
            .env_remove("EDGEDRIVE_CONFIG")
            .output()
            .unwrap();
        assert_eq!(
            o.status.code(),
            Some(0),
            "{cmd:?}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
        outs.push((format!("{} stdout", cmd[0]), o.stdout));
    }
    let run = dir.path().join("run");
    let mut names: Vec<_> = std::fs::read_dir(&run)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    for n in names {
        outs.push((
            n.to_string_lossy().into_owned(),
            std::fs::read(Path::new(&run).join(&n)).unwrap(),
        ));
    }
    outs
}

fn determinism() -> (bool, String) {
    let (a, b) = (cli_outputs(), cli_outputs());
    let differing: Vec<&str> = a
        .iter()
        .zip(&b)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.as_str())
        .collect();
    let ok = a.len() == b.len() && differing.is_empty();
    let files: Vec<&str> = a
        .iter()
        .map(|x| x.0.as_str())
        .filter(|n| !n.ends_with("stdout"))
        .collect();
    (
        ok,
        format!(
            "{} commands twice, {} outputs compared ({}), differing: {}",
            COMMANDS.len(),
            a.len(),
            files.join(", "),
            if differing.is_empty() {
                "none".into()
            } else {
                differing.join(", ")
            }
        ),
    )
}

fn metric_formulas() -> (bool, String) {
    let mut rng = SimRng::new(1010);
    let mut mismatches = 0;
    let mut real_err = 0f64;
    for _ in 0..METRIC_CASES {
        let n = 1 + rng.below(40);
        let pred: Vec<bool> = (0..n).map(|_| rng.uniform() < 0.4).collect();
        let truth: Vec<bool> = (0..n).map(|_| rng.uniform() < 0.4).collect();
        let (tp, tn, fp, fn_) = brute_confusion(&pred, &truth);
        let acc = compute_accuracy(&DetectionCounts { tp, tn, fp, fn_ }).unwrap();
        mismatches += (acc != (100 * (tp + tn)) as f64 / n as f64) as u32;

        let runs = 1 + rng.below(200) as u64;
        let hits = (0..runs).filter(|_| rng.uniform() < 0.3).count() as u64;
        mismatches += (compute_collision_rate(hits, runs).unwrap()
            != (100 * hits) as f64 / runs as f64) as u32;

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
        mismatches += (compute_iou(&bb(a), &bb(b)) != inter as f64 / union as f64) as u32;

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
        real_err = real_err.max((compute_iou(&a, &b) - sorted_iou(&a, &b)).abs());
    }
    (
        mismatches == 0 && real_err < REAL_TOL,
        format!("{METRIC_CASES} instances each: {mismatches} exact mismatches, real IoU max err {real_err:.2e}"),
    )
}

fn main() {
    let cfg = RunConfig::default();
    let mut gate = Gate { failed: Vec::new() };

    let (ok, d) = fusion_oracle();
    gate.report(1, "fusion oracle equivalence", ok, d);
    let (ok, d) = gradient_fidelity(&cfg);
    gate.report(2, "gradient fidelity", ok, d);
    let (ok, d) = epsilon_distribution();
    gate.report(3, "epsilon-greedy distribution", ok, d);
    let (ok, d) = fixed_point();
    gate.report(4, "Q-learning fixed point", ok, d);
    let (ok, d, policy) = rl_convergence(&cfg);
    gate.report(5, "RL convergence trend", ok, d);
    let classifier =
        train_cell_classifier(&cfg.perception, &cfg.sensors, classifier_seed(SEED)).unwrap();
    let (ok, d) = latency_trend(&cfg, &policy, &classifier);
    gate.report(6, "latency calibration and trend", ok, d);
    let (ok, d) = adaptive_weighting(&cfg);
    gate.report(7, "adaptive weighting benefit", ok, d);
    let (ok, d) = compression(&cfg, &classifier);
    gate.report(8, "quantization and pruning", ok, d);
    let (ok, d) = determinism();
    gate.report(9, "determinism", ok, d);
    let (ok, d) = metric_formulas();
    gate.report(10, "metric formulas", ok, d);

    if gate.failed.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: failed {:?}", gate.failed);
        std::process::exit(1);
    }
}
