//! Epsilon-greedy DQN over the fused driving state, plus the tabular
//! Q-learning rule it approximates.

mod env;
mod tabular;
mod train;

pub use env::{
    encode_state, reward_for, DrivingEnv, EnvConfig, EnvStep, Observation, RewardWeights,
    STATE_FEATURES,
};
pub use tabular::{tabular_q_update, value_iteration, ChainMdp, QTable};
pub use train::{
    run_direct_episode, train_agent, BrakingPolicy, CurvePoint, DirectEpisode, Policy, QPolicy,
    RandomPolicy, TrainOutcome,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, Gradients, Mlp};
use crate::rng::SimRng;
use crate::sim::Action;

/// The fixed action set, in index order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActionSpace;

impl ActionSpace {
    pub const SIZE: usize = Action::ALL.len();

    pub fn actions(&self) -> &'static [Action] {
        &Action::ALL
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in values.iter().enumerate() {
        match best {
            Some(b) if values[b] >= *v => {}
            _ => best = Some(i),
        }
    }
    best
}

/// Epsilon-greedy choice: uniform over all actions with probability `eps`,
/// otherwise the greedy action.
pub fn select_action(q_values: &[f64], eps: f64, rng: &mut SimRng) -> Result<usize> {
    if q_values.is_empty() {
        return Err(Error::Usage("empty action set".into()));
    }
    if !(0.0..=1.0).contains(&eps) {
        return Err(Error::Domain(format!("epsilon {eps} outside [0, 1]")));
    }
    if q_values.iter().any(|q| !q.is_finite()) {
        return Err(Error::Numerical("non-finite Q value".into()));
    }
    if rng.uniform() < eps {
        Ok(rng.below(q_values.len()))
    } else {
        Ok(argmax(q_values).expect("non-empty"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: usize,
    pub r: f64,
    pub s_next: Vec<f64>,
    /// Terminal: no bootstrap from `s_next`.
    pub done: bool,
}

/// One-step bootstrapped target `r + γ max Q(s', ·)`.
pub fn q_target(t: &Transition, gamma: f64, q_next: &[f64]) -> f64 {
    if t.done || gamma == 0.0 {
        return t.r;
    }
    t.r + gamma * q_next.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Where the discount exponent starts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscountConvention {
    /// `Σ_{i=1..T} γ^i r_i`: the first reward is already discounted once.
    #[default]
    FirstDiscounted,
    /// `Σ_{i=1..T} γ^(i-1) r_i`.
    FirstUndiscounted,
}

pub fn cumulative_reward(
    rewards: &[f64],
    gamma: f64,
    convention: DiscountConvention,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::Domain(format!("discount {gamma} outside [0, 1]")));
    }
    let mut w = match convention {
        DiscountConvention::FirstDiscounted => gamma,
        DiscountConvention::FirstUndiscounted => 1.0,
    };
    let mut total = 0.0;
    for r in rewards {
        total += w * r;
        w *= gamma;
    }
    Ok(total)
}

/// Fixed-capacity ring of transitions with a seeded sampler.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
    rng: SimRng,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, rng: SimRng) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Usage("replay capacity must be >= 1".into()));
        }
        Ok(ReplayBuffer {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            next: 0,
            rng,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Indices of a batch drawn uniformly without replacement.
    pub fn sample_indices(&mut self, batch: usize) -> Result<Vec<usize>> {
        if batch == 0 || batch > self.items.len() {
            return Err(Error::Usage(format!(
                "cannot draw {batch} transitions from a buffer of {}",
                self.items.len()
            )));
        }
        Ok(self.rng.sample_indices(self.items.len(), batch))
    }

    pub fn sample(&mut self, batch: usize) -> Result<Vec<&Transition>> {
        let idx = self.sample_indices(batch)?;
        Ok(idx.into_iter().map(|i| &self.items[i]).collect())
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.items.get(i)
    }
}

/// Linear decay from `start` to `end` over `decay_ticks`, then flat.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_ticks: u64,
}

impl EpsilonSchedule {
    pub fn value(&self, tick: u64) -> f64 {
        if self.decay_ticks == 0 || tick >= self.decay_ticks {
            return self.end;
        }
        let f = tick as f64 / self.decay_ticks as f64;
        (self.start + (self.end - self.start) * f)
            .clamp(self.end.min(self.start), self.start.max(self.end))
    }
}

/// Agent section of the run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub learning_rate: f64,
    pub gamma: f64,
    pub epsilon: EpsilonSchedule,
    pub batch_size: usize,
    /// Train steps between target-network syncs.
    pub target_sync: u64,
    pub replay_capacity: usize,
    /// Environment ticks per train step.
    pub train_every: u64,
    /// Transitions collected before training starts.
    pub warmup: usize,
    pub hidden: Vec<usize>,
    pub reward: RewardWeights,
    pub discount_convention: DiscountConvention,
    /// Clamp each TD error to `±td_clip` in the gradient (Huber loss);
    /// `None` descends the plain squared error.
    pub td_clip: Option<f64>,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            learning_rate: 3e-4,
            gamma: 0.98,
            epsilon: EpsilonSchedule {
                start: 1.0,
                end: 0.05,
                decay_ticks: 50_000,
            },
            batch_size: 64,
            target_sync: 1000,
            replay_capacity: 50_000,
            train_every: 4,
            warmup: 1_000,
            hidden: vec![32, 32],
            reward: RewardWeights::default(),
            discount_convention: DiscountConvention::default(),
            td_clip: None,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::config("agent.learning_rate", "must be >= 0"));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::config("agent.gamma", "must lie in [0, 1)"));
        }
        let e = &self.epsilon;
        if !(0.0..=1.0).contains(&e.start) || !(0.0..=1.0).contains(&e.end) || e.end > e.start {
            return Err(Error::config(
                "agent.epsilon",
                "expected 0 <= end <= start <= 1",
            ));
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("replay_capacity", self.replay_capacity),
            ("target_sync", self.target_sync as usize),
            ("train_every", self.train_every as usize),
        ] {
            if v == 0 {
                return Err(Error::config(format!("agent.{name}"), "must be >= 1"));
            }
        }
        if self.batch_size > self.replay_capacity {
            return Err(Error::config(
                "agent.batch_size",
                "exceeds agent.replay_capacity",
            ));
        }
        if let Some(c) = self.td_clip {
            if !(c > 0.0) {
                return Err(Error::config("agent.td_clip", "must be > 0 or null"));
            }
        }
        if self.hidden.contains(&0) {
            return Err(Error::config("agent.hidden", "layer widths must be >= 1"));
        }
        self.reward.validate()
    }

    /// Fresh Q-network `STATE_FEATURES -> hidden.. -> |A|`.
    pub fn build_qnet(&self, rng: &mut SimRng) -> Result<Mlp> {
        let mut sizes = vec![STATE_FEATURES];
        sizes.extend(&self.hidden);
        sizes.push(ActionSpace::SIZE);
        Mlp::init(&sizes, Activation::Relu, Activation::Linear, rng)
    }
}

/// One SGD step on the mean squared TD error of the chosen actions. Returns
/// the loss before the step.
pub fn train_step(
    qnet: &mut Mlp,
    target_net: &Mlp,
    batch: &[&Transition],
    lr: f64,
    gamma: f64,
) -> Result<f64> {
    train_step_clipped(qnet, target_net, batch, lr, gamma, None)
}

/// [`train_step`] with each TD error clamped to `±clip` in the gradient.
/// The returned loss is still the unclipped mean squared TD error.
pub fn train_step_clipped(
    qnet: &mut Mlp,
    target_net: &Mlp,
    batch: &[&Transition],
    lr: f64,
    gamma: f64,
    clip: Option<f64>,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Usage("empty training batch".into()));
    }
    if qnet.input_dim() != target_net.input_dim() || qnet.output_dim() != target_net.output_dim() {
        return Err(Error::Usage(
            "online and target networks differ in shape".into(),
        ));
    }
    let n = batch.len() as f64;
    let mut grads = Gradients::zeros_like(qnet);
    let mut loss = 0.0;
    let mut g = vec![0.0; qnet.output_dim()];
    for t in batch {
        if t.a >= qnet.output_dim() {
            return Err(Error::Usage(format!(
                "action {} outside the network's outputs",
                t.a
            )));
        }
        let y = if t.done {
            t.r
        } else {
            q_target(t, gamma, &target_net.forward(&t.s_next)?)
        };
        let cache = qnet.forward_cached(&t.s)?;
        let td = cache.output[t.a] - y;
        loss += td * td;
        g.iter_mut().for_each(|v| *v = 0.0);
        let td_g = match clip {
            Some(c) => td.clamp(-c, c),
            None => td,
        };
        g[t.a] = 2.0 * td_g / n;
        qnet.backward_into(&cache, &g, &mut grads)?;
    }
    if lr != 0.0 {
        qnet.apply_gradients(&grads, lr)?;
    }
    Ok(loss / n)
}
