use serde::{Deserialize, Serialize};

use super::env::{DrivingEnv, EnvConfig, Observation, RewardWeights};
use super::{
    cumulative_reward, select_action, train_step_clipped, AgentConfig, ReplayBuffer, Transition,
};
use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::rng::{derive_seed, stream, SimRng};
use crate::sim::{Action, VehicleState, WeatherKind};

/// Maps an observation to an action.
pub trait Policy: Send + Sync {
    fn act(&self, obs: &Observation, rng: &mut SimRng) -> Result<Action>;
}

/// Epsilon-greedy over a Q-network (greedy by default).
#[derive(Debug, Clone)]
pub struct QPolicy {
    pub net: Mlp,
    pub epsilon: f64,
}

impl QPolicy {
    pub fn greedy(net: Mlp) -> Self {
        QPolicy { net, epsilon: 0.0 }
    }
}

impl Policy for QPolicy {
    fn act(&self, obs: &Observation, rng: &mut SimRng) -> Result<Action> {
        let q = self.net.forward(&obs.features)?;
        Action::from_index(select_action(&q, self.epsilon, rng)?)
    }
}

/// Uniform over the action set.
#[derive(Debug, Clone, Copy, Default)]
pub struct RandomPolicy;

impl Policy for RandomPolicy {
    fn act(&self, _obs: &Observation, rng: &mut SimRng) -> Result<Action> {
        Action::from_index(rng.below(Action::ALL.len()))
    }
}

/// Brakes once the fused gap falls inside the stopping distance plus a
/// margin; otherwise holds the lane center and a cruise speed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BrakingPolicy {
    pub decel: f64,
    pub margin_m: f64,
    pub cruise_speed: f64,
    pub lateral_deadband: f64,
}

impl Default for BrakingPolicy {
    fn default() -> Self {
        BrakingPolicy {
            decel: 6.0,
            margin_m: 3.0,
            cruise_speed: 20.0,
            lateral_deadband: 0.3,
        }
    }
}

impl Policy for BrakingPolicy {
    fn act(&self, obs: &Observation, _rng: &mut SimRng) -> Result<Action> {
        let [gap, closing, lateral, speed] = obs.fused;
        if closing > 0.0 && gap <= closing * closing / (2.0 * self.decel) + self.margin_m {
            return Ok(Action::Brake);
        }
        if lateral > self.lateral_deadband {
            return Ok(Action::SteerRight);
        }
        if lateral < -self.lateral_deadband {
            return Ok(Action::SteerLeft);
        }
        Ok(if speed < self.cruise_speed - 0.5 {
            Action::Accelerate
        } else {
            Action::Maintain
        })
    }
}

/// One point of the training curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub episode: usize,
    pub cumulative_reward: f64,
    pub epsilon: f64,
    pub collided: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub qnet: Mlp,
    pub curve: Vec<CurvePoint>,
    pub train_steps: u64,
}

/// Training weather for episode `i`: cycles through `weathers`.
fn weather_for(weathers: &[WeatherKind], i: usize) -> WeatherKind {
    weathers[i % weathers.len()]
}

/// DQN training under direct (undelayed) control, cycling through
/// `weathers` episode by episode.
pub fn train_agent(
    env: &EnvConfig,
    agent: &AgentConfig,
    weathers: &[WeatherKind],
    episodes: usize,
    seed: u64,
) -> Result<TrainOutcome> {
    env.validate()?;
    agent.validate()?;
    if weathers.is_empty() {
        return Err(Error::Usage("no training weathers given".into()));
    }
    let mut init_rng = SimRng::derived(seed, stream::INIT);
    let mut qnet = agent.build_qnet(&mut init_rng)?;
    let mut target = qnet.clone();
    let mut replay =
        ReplayBuffer::new(agent.replay_capacity, SimRng::derived(seed, stream::REPLAY))?;
    let mut policy_rng = SimRng::derived(seed, stream::POLICY);
    let scenario_seed = derive_seed(seed, stream::SCENARIO);

    let mut curve = Vec::with_capacity(episodes);
    let mut ticks: u64 = 0;
    let mut train_steps: u64 = 0;
    for ep in 0..episodes {
        let mut env_state = DrivingEnv::reset(
            env,
            weather_for(weathers, ep),
            agent.reward,
            derive_seed(scenario_seed, ep as u64),
        )?;
        let mut obs = env_state.observation();
        let mut rewards = Vec::new();
        let mut collided = false;
        let eps_start = agent.epsilon.value(ticks);
        while !env_state.done() {
            let eps = agent.epsilon.value(ticks);
            let q = qnet.forward(&obs.features)?;
            let a = select_action(&q, eps, &mut policy_rng)?;
            let step = env_state.step(Action::from_index(a)?)?;
            let next = env_state.observation();
            replay.push(Transition {
                s: std::mem::take(&mut obs.features),
                a,
                r: step.reward,
                s_next: next.features.clone(),
                done: step.outcome.collided,
            });
            rewards.push(step.reward);
            collided |= step.outcome.collided;
            obs = next;
            ticks += 1;

            if replay.len() >= agent.warmup.max(agent.batch_size)
                && ticks.is_multiple_of(agent.train_every)
            {
                let batch = replay.sample(agent.batch_size)?;
                let loss = train_step_clipped(
                    &mut qnet,
                    &target,
                    &batch,
                    agent.learning_rate,
                    agent.gamma,
                    agent.td_clip,
                )?;
                if !loss.is_finite() {
                    return Err(Error::Numerical(format!(
                        "training diverged at episode {ep}"
                    )));
                }
                train_steps += 1;
                if train_steps.is_multiple_of(agent.target_sync) {
                    target = qnet.clone();
                }
            }
        }
        curve.push(CurvePoint {
            episode: ep,
            cumulative_reward: cumulative_reward(&rewards, agent.gamma, agent.discount_convention)?,
            epsilon: eps_start,
            collided,
        });
    }
    Ok(TrainOutcome {
        qnet,
        curve,
        train_steps,
    })
}

/// Trace of an episode under direct control.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectEpisode {
    pub ego: Vec<VehicleState>,
    pub actions: Vec<Action>,
    pub rewards: Vec<f64>,
    pub collided: bool,
    pub lane_departure_ticks: u32,
}

/// Run `policy` with every action applied on the tick it is chosen.
pub fn run_direct_episode(
    env: &EnvConfig,
    reward: RewardWeights,
    policy: &dyn Policy,
    weather: WeatherKind,
    seed: u64,
) -> Result<DirectEpisode> {
    let mut e = DrivingEnv::reset(env, weather, reward, derive_seed(seed, stream::WORLD))?;
    let mut rng = SimRng::derived(seed, stream::POLICY);
    let mut out = DirectEpisode {
        ego: vec![e.world().ego],
        actions: Vec::new(),
        rewards: Vec::new(),
        collided: false,
        lane_departure_ticks: 0,
    };
    while !e.done() {
        let a = policy.act(&e.observation(), &mut rng)?;
        let s = e.step(a)?;
        out.ego.push(e.world().ego);
        out.actions.push(a);
        out.rewards.push(s.reward);
        out.collided |= s.outcome.collided;
        out.lane_departure_ticks += s.outcome.lane_departed as u32;
    }
    Ok(out)
}
