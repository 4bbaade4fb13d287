//! The `edgedrive` command line.
//!
//! Exit codes: 0 success, 1 check failure, 2 usage or configuration error,
//! 3 I/O error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::bench::{
    aggregate_report, run_benchmark, write_episodes_csv, DeploymentMode, PerceptionModels,
};
use crate::config::{RunConfig, CONFIG_ENV};
use crate::error::{Error, Result};
use crate::evaluation::{
    classifier_seed, compare_policies, compression_study, fusion_study, EvaluationReport,
};
use crate::nn::{gradcheck_suite, load_mlp, save_mlp, Mlp, GRAD_CHECK_TOLERANCE};
use crate::perception::train_cell_classifier;
use crate::rl::{
    train_agent, ActionSpace, CurvePoint, Policy, QPolicy, RandomPolicy, STATE_FEATURES,
};
use crate::sim::WeatherKind;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;

pub const QNET_FILE: &str = "qnet.json";
pub const PERCEPTION_FILE: &str = "perception.json";
pub const CONVERGENCE_FILE: &str = "convergence.csv";
pub const REPORT_FILE: &str = "report.json";
pub const EPISODES_FILE: &str = "episodes.csv";
pub const EVALUATION_FILE: &str = "evaluation.json";
pub const RUN_CONFIG_FILE: &str = "run_config.json";

#[derive(Debug, Parser)]
#[command(
    name = "edgedrive",
    version,
    about = "Edge vs cloud driving pipeline simulator"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// JSON run configuration; embedded defaults when absent.
    #[arg(long, global = true, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,
    /// Master seed override.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory override.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Worker threads for episode fan-out (0 = one per core).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the perception classifier and the DQN agent.
    Train {
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Run the edge/cloud benchmark grid.
    Benchmark {
        /// Comma-separated deployment modes.
        #[arg(long, value_delimiter = ',')]
        modes: Option<Vec<String>>,
        /// Comma-separated weathers.
        #[arg(long, value_delimiter = ',')]
        weathers: Option<Vec<String>>,
        /// Episodes per (mode, weather) cell.
        #[arg(long)]
        episodes: Option<u64>,
        /// Use the uniform-random policy instead of a trained snapshot.
        #[arg(long)]
        random_policy: bool,
    },
    /// Compare the policy against random, and study compression and fusion.
    Evaluate {
        /// Direct-control episodes per weather.
        #[arg(long)]
        episodes: Option<u64>,
        /// Fusion-study episodes per weather.
        #[arg(long)]
        fusion_episodes: Option<u64>,
        #[arg(long, value_delimiter = ',')]
        weathers: Option<Vec<String>>,
        #[arg(long)]
        random_policy: bool,
    },
    /// Verify analytic gradients against central differences.
    Gradcheck {
        #[arg(long, default_value_t = 100)]
        seeds: u64,
        /// Corrupt one analytic gradient entry (test fixture).
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
}

/// Parse `args` (program name first) and run. Human-readable output goes to
/// `out`, diagnostics to `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                err.write_all(text.as_bytes())
            } else {
                out.write_all(text.as_bytes())
            };
            return code;
        }
    };
    match dispatch(cli, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } | Error::Usage(_) | Error::Format(_) | Error::MissingCell { .. } => {
            EXIT_USAGE
        }
        Error::Io(_) => EXIT_IO,
        _ => EXIT_CHECK_FAILED,
    }
}

fn dispatch(cli: Cli, out: &mut dyn Write) -> Result<i32> {
    if let Command::Gradcheck {
        seeds,
        inject_fault,
    } = cli.command
    {
        let cfg = load_config(&cli.global)?;
        return gradcheck(&cfg, seeds, inject_fault, out);
    }
    let mut cfg = load_config(&cli.global)?;
    match cli.command {
        Command::Train { episodes } => {
            if let Some(n) = episodes {
                cfg.training.episodes = n;
            }
            train(&cfg, out)
        }
        Command::Benchmark {
            modes,
            weathers,
            episodes,
            random_policy,
        } => {
            if let Some(m) = modes {
                cfg.benchmark.modes = parse_list(&m, "--modes")?;
            }
            if let Some(w) = weathers {
                cfg.benchmark.weathers = parse_list(&w, "--weathers")?;
            }
            if let Some(n) = episodes {
                cfg.benchmark.episodes = n;
            }
            cfg.validate()?;
            benchmark(&cfg, random_policy, out)
        }
        Command::Evaluate {
            episodes,
            fusion_episodes,
            weathers,
            random_policy,
        } => {
            if let Some(n) = episodes {
                cfg.evaluation.policy_episodes = n;
            }
            if let Some(n) = fusion_episodes {
                cfg.evaluation.fusion_episodes = n;
            }
            let weathers = match weathers {
                Some(w) => parse_list(&w, "--weathers")?,
                None => WeatherKind::ALL.to_vec(),
            };
            cfg.validate()?;
            evaluate(&cfg, &weathers, random_policy, out)
        }
        Command::Gradcheck { .. } => unreachable!("handled above"),
    }
}

fn load_config(g: &GlobalArgs) -> Result<RunConfig> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(d) = &g.out_dir {
        cfg.out_dir = d.clone();
    }
    if let Some(t) = g.threads {
        cfg.benchmark.threads = t;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_list<T: std::str::FromStr<Err = Error>>(items: &[String], flag: &str) -> Result<Vec<T>> {
    if items.is_empty() {
        return Err(Error::Usage(format!("{flag} needs at least one value")));
    }
    items.iter().map(|s| s.trim().parse()).collect()
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn prepare_out_dir(cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| Error::Io(format!("{}: {e}", cfg.out_dir.display())))?;
    write_file(
        &cfg.out_dir.join(RUN_CONFIG_FILE),
        &(serde_json::to_string_pretty(cfg).expect("config serializes") + "\n"),
    )
}

fn write_convergence(path: &Path, curve: &[CurvePoint]) -> Result<()> {
    let io = |e: csv::Error| Error::Io(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(["episode", "cumulative_reward", "epsilon", "collided"])
        .map_err(io)?;
    for p in curve {
        w.write_record([
            p.episode.to_string(),
            p.cumulative_reward.to_string(),
            p.epsilon.to_string(),
            (p.collided as u8).to_string(),
        ])
        .map_err(io)?;
    }
    w.flush()
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn train(cfg: &RunConfig, out: &mut dyn Write) -> Result<i32> {
    prepare_out_dir(cfg)?;
    let classifier =
        train_cell_classifier(&cfg.perception, &cfg.sensors, classifier_seed(cfg.seed))?;
    save_mlp(&classifier, &cfg.out_dir.join(PERCEPTION_FILE))?;

    let outcome = train_agent(
        &cfg.env(),
        &cfg.agent,
        &cfg.training.weathers,
        cfg.training.episodes,
        cfg.seed,
    )?;
    save_mlp(&outcome.qnet, &cfg.out_dir.join(QNET_FILE))?;
    write_convergence(&cfg.out_dir.join(CONVERGENCE_FILE), &outcome.curve)?;

    let tail = &outcome.curve[outcome.curve.len().saturating_sub(100)..];
    let _ = writeln!(
        out,
        "trained {} episodes, {} gradient steps",
        cfg.training.episodes, outcome.train_steps
    );
    if !tail.is_empty() {
        let mean = tail.iter().map(|p| p.cumulative_reward).sum::<f64>() / tail.len() as f64;
        let collisions = tail.iter().filter(|p| p.collided).count();
        let _ = writeln!(
            out,
            "last {} episodes: mean cumulative reward {mean:.3}, {collisions} collisions",
            tail.len()
        );
    }
    let _ = writeln!(out, "wrote {}", cfg.out_dir.display());
    Ok(EXIT_OK)
}

fn load_policy(cfg: &RunConfig, random: bool) -> Result<(Box<dyn Policy>, &'static str)> {
    if random {
        return Ok((Box::new(RandomPolicy), "random"));
    }
    let path = cfg.out_dir.join(QNET_FILE);
    if !path.exists() {
        return Err(Error::Usage(format!(
            "no trained snapshot at {} (run `train` first or pass --random-policy)",
            path.display()
        )));
    }
    let net = load_mlp(&path)?;
    if net.input_dim() != STATE_FEATURES || net.output_dim() != ActionSpace::SIZE {
        return Err(Error::Format(format!(
            "{}: expected a {STATE_FEATURES}-input, {}-output network",
            path.display(),
            ActionSpace::SIZE
        )));
    }
    Ok((Box::new(QPolicy::greedy(net)), "trained"))
}

/// The saved classifier, or a freshly trained one when none is saved.
fn load_perception(cfg: &RunConfig) -> Result<Mlp> {
    let path = cfg.out_dir.join(PERCEPTION_FILE);
    if path.exists() {
        load_mlp(&path)
    } else {
        train_cell_classifier(&cfg.perception, &cfg.sensors, classifier_seed(cfg.seed))
    }
}

fn benchmark(cfg: &RunConfig, random: bool, out: &mut dyn Write) -> Result<i32> {
    let (policy, _) = load_policy(cfg, random)?;
    let models = PerceptionModels::new(load_perception(cfg)?);
    prepare_out_dir(cfg)?;
    let b = &cfg.benchmark;
    let metrics = run_benchmark(
        &cfg.pipeline(),
        Some(&models),
        policy.as_ref(),
        &b.modes,
        &b.weathers,
        b.episodes,
        cfg.seed,
        b.threads,
    )?;
    let cells: Vec<(DeploymentMode, WeatherKind)> = b
        .modes
        .iter()
        .flat_map(|m| b.weathers.iter().map(move |w| (*m, *w)))
        .collect();
    let report = aggregate_report(&metrics, &cells)?;
    write_file(&cfg.out_dir.join(REPORT_FILE), &(report.to_json() + "\n"))?;
    let mut csv_buf = Vec::new();
    write_episodes_csv(&metrics, &mut csv_buf)?;
    std::fs::write(cfg.out_dir.join(EPISODES_FILE), csv_buf).map_err(|e| {
        Error::Io(format!(
            "{}: {e}",
            cfg.out_dir.join(EPISODES_FILE).display()
        ))
    })?;

    let _ = writeln!(
        out,
        "{:<6} {:<6} {:>8} {:>10} {:>12} {:>11} {:>10}",
        "mode", "weather", "episodes", "accuracy%", "latency_ms", "collision%", "lane_dep%"
    );
    for c in &report.cells {
        let _ = writeln!(
            out,
            "{:<6} {:<6} {:>8} {:>10.2} {:>12.1} {:>11.1} {:>10.2}",
            c.mode.name(),
            c.weather.name(),
            c.episodes,
            c.accuracy_pct,
            c.mean_latency_ms,
            c.collision_rate_pct,
            c.lane_departure_rate_pct
        );
    }
    Ok(EXIT_OK)
}

fn evaluate(
    cfg: &RunConfig,
    weathers: &[WeatherKind],
    random: bool,
    out: &mut dyn Write,
) -> Result<i32> {
    let (policy, label) = load_policy(cfg, random)?;
    let classifier = load_perception(cfg)?;
    prepare_out_dir(cfg)?;
    let ev = &cfg.evaluation;
    let env = cfg.env();
    let policies = compare_policies(
        &env,
        cfg.agent.reward,
        (cfg.agent.gamma, cfg.agent.discount_convention),
        policy.as_ref(),
        weathers,
        ev.policy_episodes,
        cfg.seed,
    )?;
    let compression = compression_study(
        &cfg.perception,
        &cfg.sensors,
        &classifier,
        ev.heldout_grids,
        ev.prune_fraction,
        cfg.seed,
    )?;
    let fusion = fusion_study(&env, weathers, ev.fusion_episodes, cfg.seed)?;
    let report = EvaluationReport {
        seed: cfg.seed,
        policy: label.into(),
        policies,
        compression,
        fusion,
    };
    write_file(
        &cfg.out_dir.join(EVALUATION_FILE),
        &(report.to_json() + "\n"),
    )?;

    let _ = writeln!(
        out,
        "{:<6} {:>14} {:>14} {:>12}",
        "weather", "collision%", "random%", "reduction%"
    );
    for p in &report.policies {
        let red = p
            .collision_reduction_pct
            .map_or("n/a".to_string(), |r| format!("{r:.1}"));
        let _ = writeln!(
            out,
            "{:<6} {:>14.1} {:>14.1} {:>12}",
            p.weather.name(),
            p.policy.collision_rate_pct,
            p.random.collision_rate_pct,
            red
        );
    }
    let c = &report.compression;
    let _ = writeln!(
        out,
        "perception accuracy: full {:.2}%, int8 {:.2}% ({:+.2} pts), pruned {:.0}% -> {:.2}% (mac reduction {:.3})",
        c.full_accuracy_pct,
        c.int8_accuracy_pct,
        c.int8_delta_pts,
        100.0 * c.pruned_weight_fraction,
        c.pruned_accuracy_pct,
        c.mac_reduction
    );
    let _ = writeln!(
        out,
        "{:<6} {:>8} {:>8} {:>8} {:>8} {:>10}",
        "weather", "fused", "camera", "lidar", "radar", "cam_weight"
    );
    for f in &report.fusion {
        let _ = writeln!(
            out,
            "{:<6} {:>8.3} {:>8.3} {:>8.3} {:>8.3} {:>10.4}",
            f.weather.name(),
            f.fused_rmse,
            f.camera_rmse,
            f.lidar_rmse,
            f.radar_rmse,
            f.gap_weights[0]
        );
    }
    Ok(EXIT_OK)
}

fn gradcheck(cfg: &RunConfig, seeds: u64, inject_fault: bool, out: &mut dyn Write) -> Result<i32> {
    if seeds == 0 {
        return Err(Error::Usage("--seeds must be >= 1".into()));
    }
    let mut sizes = vec![STATE_FEATURES];
    sizes.extend(&cfg.agent.hidden);
    sizes.push(ActionSpace::SIZE);
    let fault = if inject_fault { 1e-2 } else { 0.0 };
    let rows = gradcheck_suite(seeds, &sizes, fault)?;
    let _ = writeln!(
        out,
        "{:<10} {:>6} {:>8} {:>14} {:>6}  {:<16} status",
        "layer", "seeds", "params", "max_rel_err", "seed", "worst_param"
    );
    let mut failed = false;
    for r in &rows {
        let ok = r.passed();
        failed |= !ok;
        let _ = writeln!(
            out,
            "{:<10} {:>6} {:>8} {:>14.3e} {:>6}  {:<16} {}",
            r.case,
            r.seeds,
            r.params_checked,
            r.max_relative_error,
            r.worst_seed,
            r.worst_param,
            if ok { "ok" } else { "FAIL" }
        );
        if !ok {
            let _ = writeln!(
                out,
                "{}: parameter {} (seed {}) exceeds relative error {GRAD_CHECK_TOLERANCE:e}",
                r.case, r.worst_param, r.worst_seed
            );
        }
    }
    Ok(if failed { EXIT_CHECK_FAILED } else { EXIT_OK })
}
