use super::mlp::{backward, squared_error, Mlp};
use super::rnn::{rnn_backward, RecurrentCell};
use serde::Serialize;

use super::dense::Activation;
use crate::error::{Error, Result};
use crate::rng::SimRng;

/// Absolute floor on the relative-error denominator. Below it the check
/// degrades to absolute error, which keeps exactly-zero and near-zero
/// gradients from amplifying central-difference roundoff.
pub const GRAD_CHECK_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_index: usize,
    pub worst_param: String,
    pub analytic: f64,
    pub numeric: f64,
    pub params_checked: usize,
}

/// Compare `analytic` against central differences of `loss` around `params`.
pub fn check_gradients(
    params: &[f64],
    analytic: &[f64],
    mut loss: impl FnMut(&[f64]) -> f64,
    eps: f64,
) -> Result<GradCheckReport> {
    if params.len() != analytic.len() {
        return Err(Error::Shape(format!(
            "{} params but {} gradient entries",
            params.len(),
            analytic.len()
        )));
    }
    let mut p = params.to_vec();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_index: 0,
        worst_param: String::new(),
        analytic: 0.0,
        numeric: 0.0,
        params_checked: params.len(),
    };
    for i in 0..params.len() {
        p[i] = params[i] + eps;
        let up = loss(&p);
        p[i] = params[i] - eps;
        let down = loss(&p);
        p[i] = params[i];
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic[i];
        let denom = a.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
        let err = (a - numeric).abs() / denom;
        if !(err <= report.max_relative_error) {
            report.max_relative_error = err;
            report.worst_index = i;
            report.analytic = a;
            report.numeric = numeric;
        }
    }
    Ok(report)
}

/// Gradient check of an MLP under `L = Σ (f(x) - target)²`.
pub fn gradient_check(model: &Mlp, x: &[f64], target: &[f64], eps: f64) -> Result<GradCheckReport> {
    gradient_check_perturbed(model, x, target, eps, 0.0)
}

/// As [`gradient_check`], with `fault` added to the first analytic entry.
fn gradient_check_perturbed(
    model: &Mlp,
    x: &[f64],
    target: &[f64],
    eps: f64,
    fault: f64,
) -> Result<GradCheckReport> {
    let cache = model.forward_cached(x)?;
    let (_, g) = squared_error(&cache.output, target)?;
    let mut analytic = backward(model, &cache, &g)?.flatten();
    analytic[0] += fault;
    let mut probe = model.clone();
    let mut report = check_gradients(
        &model.params(),
        &analytic,
        |p| {
            probe.set_params(p).expect("same shape");
            let y = probe.forward(x).expect("same shape");
            squared_error(&y, target).expect("same shape").0
        },
        eps,
    )?;
    report.worst_param = model.param_name(report.worst_index);
    Ok(report)
}

/// Gradient check of the TD loss `(Q(s)[action] - target)²`, the only
/// output that receives gradient during Q-network training.
pub fn gradient_check_q(
    model: &Mlp,
    state: &[f64],
    action: usize,
    target: f64,
    eps: f64,
) -> Result<GradCheckReport> {
    if action >= model.output_dim() {
        return Err(Error::Domain(format!("action {action} out of range")));
    }
    let cache = model.forward_cached(state)?;
    let mut g = vec![0.0; model.output_dim()];
    g[action] = 2.0 * (cache.output[action] - target);
    let analytic = backward(model, &cache, &g)?.flatten();
    let mut probe = model.clone();
    let mut report = check_gradients(
        &model.params(),
        &analytic,
        |p| {
            probe.set_params(p).expect("same shape");
            let q = probe.forward(state).expect("same shape");
            (q[action] - target).powi(2)
        },
        eps,
    )?;
    report.worst_param = model.param_name(report.worst_index);
    Ok(report)
}

/// Gradient check of an unrolled cell under `L = Σ_t ||h_t - target_t||²`.
pub fn gradient_check_rnn(
    cell: &RecurrentCell,
    h0: &[f64],
    xs: &[Vec<f64>],
    targets: &[Vec<f64>],
    eps: f64,
) -> Result<GradCheckReport> {
    if targets.len() != xs.len() {
        return Err(Error::Shape("one target per step required".into()));
    }
    let loss_of = |c: &RecurrentCell| -> Result<f64> {
        let cache = c.unroll(h0, xs)?;
        Ok(cache.hidden[1..]
            .iter()
            .zip(targets)
            .map(|(h, t)| h.iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
            .sum())
    };
    let cache = cell.unroll(h0, xs)?;
    let hidden_grads: Vec<Vec<f64>> = cache.hidden[1..]
        .iter()
        .zip(targets)
        .map(|(h, t)| h.iter().zip(t).map(|(a, b)| 2.0 * (a - b)).collect())
        .collect();
    let analytic = rnn_backward(cell, &cache, &hidden_grads)?.flatten();
    let mut probe = cell.clone();
    let mut report = check_gradients(
        &cell.params(),
        &analytic,
        |p| {
            probe.set_params(p).expect("same shape");
            loss_of(&probe).expect("same shape")
        },
        eps,
    )?;
    report.worst_param = cell.param_name(report.worst_index);
    Ok(report)
}

/// Relative-error bound the suite checks against.
pub const GRAD_CHECK_TOLERANCE: f64 = 1e-5;
const SUITE_EPS: f64 = 1e-5;

/// Worst case of one network family over a range of seeds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckSummary {
    pub case: String,
    pub seeds: u64,
    pub params_checked: usize,
    pub max_relative_error: f64,
    pub worst_seed: u64,
    pub worst_param: String,
}

impl GradCheckSummary {
    pub fn passed(&self) -> bool {
        self.max_relative_error < GRAD_CHECK_TOLERANCE
    }

    fn absorb(&mut self, seed: u64, r: &GradCheckReport) {
        self.params_checked += r.params_checked;
        if !(r.max_relative_error <= self.max_relative_error) {
            self.max_relative_error = r.max_relative_error;
            self.worst_seed = seed;
            self.worst_param = r.worst_param.clone();
        }
    }
}

/// An input at least `1e-3` from every ReLU kink, so central differences
/// stay on one linear piece.
fn smooth_input(model: &Mlp, rng: &mut SimRng) -> Result<Vec<f64>> {
    loop {
        let x: Vec<f64> = (0..model.input_dim())
            .map(|_| rng.standard_normal())
            .collect();
        if model.min_relu_margin(&x)? >= 1e-3 {
            return Ok(x);
        }
    }
}

/// Check dense (`8 -> 16 -> 4`), recurrent (4 units, 5 steps) and Q-network
/// (`q_sizes`, TD loss on one action) gradients for `seeds` seeds each.
/// A nonzero `fault` corrupts one dense gradient entry by that amount.
pub fn gradcheck_suite(seeds: u64, q_sizes: &[usize], fault: f64) -> Result<Vec<GradCheckSummary>> {
    let blank = |case: &str| GradCheckSummary {
        case: case.into(),
        seeds,
        params_checked: 0,
        max_relative_error: 0.0,
        worst_seed: 0,
        worst_param: String::new(),
    };
    let mut dense = blank("dense");
    let mut recurrent = blank("recurrent");
    let mut qnet = blank("q-network");
    for seed in 0..seeds {
        let mut rng = SimRng::derived(seed, 0x6772_6164);
        let m = Mlp::init(&[8, 16, 4], Activation::Relu, Activation::Linear, &mut rng)?;
        let x = smooth_input(&m, &mut rng)?;
        let t: Vec<f64> = (0..4).map(|_| rng.standard_normal()).collect();
        dense.absorb(
            seed,
            &gradient_check_perturbed(&m, &x, &t, SUITE_EPS, fault)?,
        );

        let cell = RecurrentCell::init(4, 3, &mut rng);
        let h0: Vec<f64> = (0..4).map(|_| rng.uniform_range(-0.5, 0.5)).collect();
        let xs: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..3).map(|_| rng.standard_normal()).collect())
            .collect();
        let ts: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..4).map(|_| rng.uniform()).collect())
            .collect();
        recurrent.absorb(seed, &gradient_check_rnn(&cell, &h0, &xs, &ts, SUITE_EPS)?);

        let q = Mlp::init(q_sizes, Activation::Relu, Activation::Linear, &mut rng)?;
        let s = smooth_input(&q, &mut rng)?;
        let action = rng.below(q.output_dim());
        let target = rng.standard_normal();
        qnet.absorb(seed, &gradient_check_q(&q, &s, action, target, SUITE_EPS)?);
    }
    Ok(vec![dense, recurrent, qnet])
}
